"""Bit-exact model persistence and frozen-backbone import.

File layout (.clrt, everything little-endian):

    magic   4 bytes "CLRT"
    u32     format version (1)
    u32     config length, then that many bytes of UTF-8 key=value text
    u32     tensor count
    per tensor:
        u32     name length, then UTF-8 name
        u8      dtype code (0 = single, 1 = double)
        u8      trainable flag (0 | 1)
        u32     rank
        u64[r]  extents
        raw row-major element bytes
    u32     CRC32 (zlib polynomial 0xEDB88320) of everything after the magic

Saving the same model twice yields byte-identical files; the CRC makes any
single-bit payload corruption detectable.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    CrcMismatch,
    IoWrite,
    NameMismatch,
    ShapeMismatch,
    Truncated,
)
from .model import ClaRetConfig, Model, build_layer_plan
from .params import ParamSet

MAGIC = b"CLRT"
VERSION = 1

_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

# config block fields, in the order they are written
_CONFIG_FIELDS = (
    "n_conv_blocks", "filter_exponent_lo", "filter_exponent_hi", "kernel_size",
    "dense_units", "dropout_rate", "n_classes", "input_shape", "backbone",
    "freeze_depth", "seed", "class_names",
)


def _config_to_text(config: ClaRetConfig) -> str:
    lines = []
    for key in _CONFIG_FIELDS:
        value = getattr(config, key)
        if value is None:
            text = "none"
        elif isinstance(value, tuple):
            text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ClaRetConfig:
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise Truncated(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    missing = [k for k in _CONFIG_FIELDS if k not in raw]
    if missing:
        raise Truncated(f"config block is missing keys {missing}")
    return ClaRetConfig(
        n_conv_blocks=int(raw["n_conv_blocks"]),
        filter_exponent_lo=int(raw["filter_exponent_lo"]),
        filter_exponent_hi=int(raw["filter_exponent_hi"]),
        kernel_size=int(raw["kernel_size"]),
        dense_units=tuple(int(v) for v in raw["dense_units"].split(",") if v),
        dropout_rate=float(raw["dropout_rate"]),
        n_classes=int(raw["n_classes"]),
        input_shape=tuple(int(v) for v in raw["input_shape"].split(",")),
        backbone=raw["backbone"],
        freeze_depth=None if raw["freeze_depth"] == "none" else int(raw["freeze_depth"]),
        seed=int(raw["seed"]),
        class_names=None if raw["class_names"] == "none" else tuple(raw["class_names"].split(",")),
    )


def _serialize_body(model: Model) -> bytes:
    parts = [struct.pack("<I", VERSION)]
    config_bytes = _config_to_text(model.config).encode("utf-8")
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    parts.append(struct.pack("<I", len(model.params)))
    for name, entry in model.params.items():
        name_bytes = name.encode("utf-8")
        value = entry.value
        if value.dtype not in _DTYPE_TO_CODE:
            raise ShapeMismatch(f"{name!r} has unsupported dtype {value.dtype}")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", _DTYPE_TO_CODE[value.dtype], 1 if entry.trainable else 0))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> None:
    body = _serialize_body(model)
    blob = MAGIC + body + struct.pack("<I", zlib.crc32(body))
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoWrite(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"needed {n} bytes at offset {self.pos}, file body ends at {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _parse_file(path) -> tuple[ClaRetConfig, list[tuple[str, np.ndarray, bool]]]:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(blob) < 12:
        raise Truncated(f"{path} is only {len(blob)} bytes")
    body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CrcMismatch(f"{path}: stored CRC {crc:#010x} != computed {zlib.crc32(body):#010x}")
    r = _Reader(body)
    version = r.u32()
    if version != VERSION:
        raise BadVersion(f"{path}: format version {version}, expected {VERSION}")
    config = _config_from_text(r.take(r.u32()).decode("utf-8"))
    tensors: list[tuple[str, np.ndarray, bool]] = []
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        code = r.u8()
        if code not in _CODE_TO_DTYPE:
            raise Truncated(f"{path}: unknown dtype code {code} for {name!r}")
        trainable = r.u8() != 0
        rank = r.u32()
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        dtype = _CODE_TO_DTYPE[code]
        value = np.frombuffer(r.take(dtype.itemsize * int(np.prod(shape, dtype=np.int64))), dtype=dtype)
        tensors.append((name, value.reshape(shape).copy(), trainable))
    return config, tensors


def load_checkpoint(path) -> Model:
    """Rebuild a model: config text, layer plan from the config, tensors from the file."""
    config, tensors = _parse_file(path)
    params = ParamSet()
    for name, value, trainable in tensors:
        params.add(name, value, trainable=trainable)
    plan = build_layer_plan(config)
    for layer in plan:
        for pname in (layer.weight, layer.bias):
            if pname is not None and pname not in params:
                raise Truncated(f"{path}: checkpoint is missing tensor {pname!r}")
    return Model(config=config, params=params, layer_plan=plan)


def import_backbone(model: Model, path, freeze: bool) -> Model:
    """Overwrite the model's backbone tensors from a checkpoint file.

    The file's backbone.* names must match the model's exactly; with
    ``freeze`` the imported entries become non-trainable.
    """
    _, tensors = _parse_file(path)
    file_bb = {name: value for name, value, _ in tensors if name.startswith("backbone.")}
    model_bb = [n for n in model.params.names() if n.startswith("backbone.")]
    missing = [n for n in model_bb if n not in file_bb]
    extra = [n for n in file_bb if n not in model_bb]
    if missing or extra:
        raise NameMismatch(f"backbone names differ: missing {missing}, extra {extra}")
    for name in model_bb:
        entry = model.params[name]
        value = file_bb[name]
        if value.shape != entry.value.shape:
            raise ShapeMismatch(f"{name!r}: checkpoint shape {value.shape} != model shape {entry.value.shape}")
        entry.value = value.astype(entry.value.dtype, copy=False)
        entry.momentum = np.zeros_like(entry.value)
        if freeze:
            entry.trainable = False
    return model
