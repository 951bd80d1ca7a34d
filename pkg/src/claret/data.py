"""Dataset ingestion: binary Netpbm codec (P5/P6, maxval 255), nearest
neighbour resizing, a class-per-directory tree loader and a synthetic
4-class generator for desk-scale runs.

Pixel samples are 8 bits on disk and floats in [0, 1] in memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadMaxval,
    BadSize,
    ClaRetError,
    EmptyClass,
    IoWrite,
    NoClasses,
    Truncated,
)
from .rng import RandomStream, derive_seed

_WHITESPACE = b" \t\n\r\x0b\x0c"
_EXTENSIONS = (".pgm", ".ppm")

SYNTH_CLASS_NAMES = ("band_h", "band_v", "disc", "stripe")


@dataclass
class Image:
    """Grayscale (1 channel) or RGB (3 channel) image, values in [0, 1]."""

    pixels: np.ndarray  # (height, width, channels) float64

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class Dataset:
    samples: list[tuple[np.ndarray, int]]  # (image (H,W,C) in [0,1], label)
    class_names: tuple[str, ...]


def _next_header_int(buf: bytes, pos: int) -> tuple[int, int]:
    while pos < len(buf):
        if buf[pos] in _WHITESPACE:
            pos += 1
        elif buf[pos] == ord("#"):
            while pos < len(buf) and buf[pos] != ord("\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos] not in _WHITESPACE:
        pos += 1
    token = buf[start:pos]
    if not token:
        raise Truncated("header ended before width/height/maxval")
    if not token.isdigit():
        raise Truncated(f"unparseable header token {token!r}")
    return int(token), pos


def read_image(path) -> Image:
    """Decode a binary PGM (P5) or PPM (P6) file with maxval 255."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise BadMagic(f"expected P5 or P6, got {magic!r}")
    width, pos = _next_header_int(buf, 2)
    height, pos = _next_header_int(buf, pos)
    maxval, pos = _next_header_int(buf, pos)
    if maxval != 255:
        raise BadMaxval(f"maxval must be 255, got {maxval}")
    pos += 1  # the single whitespace byte that ends the header
    need = width * height * channels
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise Truncated(f"raster holds {len(payload)} of {need} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return Image(pixels=pixels.reshape(height, width, channels))


def write_image(path, image: Image) -> None:
    """Encode to binary PGM/PPM; values are quantized to 8 bits."""
    pixels = image.pixels
    if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
        raise BadMagic(f"image must be (H, W, 1|3), got {pixels.shape}")
    magic = b"P5" if pixels.shape[2] == 1 else b"P6"
    raster = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + raster.tobytes())
    except OSError as exc:
        raise IoWrite(f"cannot write {path}: {exc}") from exc


def resize_nearest(image: Image, out_h: int, out_w: int) -> Image:
    """Nearest-neighbour resize: source index = floor((dst + 0.5) * src / dst)."""
    if out_h < 1 or out_w < 1:
        raise BadSize(f"target size {out_h}x{out_w} must be >= 1")
    src_h, src_w = image.height, image.width
    rows = np.minimum(((np.arange(out_h) + 0.5) * src_h / out_h).astype(np.int64), src_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * src_w / out_w).astype(np.int64), src_w - 1)
    return Image(pixels=image.pixels[rows][:, cols])


def adapt_channels(pixels: np.ndarray, channels: int) -> np.ndarray:
    if pixels.shape[2] == channels:
        return pixels
    if pixels.shape[2] == 1 and channels == 3:
        return np.repeat(pixels, 3, axis=2)
    if pixels.shape[2] == 3 and channels == 1:
        return pixels.mean(axis=2, keepdims=True)
    raise BadMagic(f"cannot adapt {pixels.shape[2]} channels to {channels}")


def load_dataset(root, target_shape) -> Dataset:
    """Load a ``<root>/<class>/<file>.pgm|.ppm`` tree, resized to target_shape.

    Class names are the sorted subdirectory names; file order within a class
    is lexicographic. Grayscale and RGB files are adapted to the target
    channel count (replication / averaging).
    """
    root = Path(root)
    h, w, c = (int(s) for s in target_shape)
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(subdirs) < 2:
        raise NoClasses(f"{root} holds {len(subdirs)} class directories, need >= 2")
    samples: list[tuple[np.ndarray, int]] = []
    for label, sub in enumerate(subdirs):
        files = sorted(f for f in sub.iterdir() if f.suffix.lower() in _EXTENSIONS)
        if not files:
            raise EmptyClass(f"class directory {sub} holds no .pgm/.ppm files")
        for f in files:
            try:
                img = read_image(f)
            except ClaRetError as exc:
                raise type(exc)(f"{f}: {exc}") from exc
            img = resize_nearest(img, h, w)
            samples.append((adapt_channels(img.pixels, c), label))
    return Dataset(samples=samples, class_names=tuple(d.name for d in subdirs))


def _synth_masks(side: int) -> list[np.ndarray]:
    width = -(-side // 4)  # band/stripe width, side/4 rounded up
    start = (side - width) // 2
    yy, xx = np.mgrid[0:side, 0:side]
    center = (side - 1) / 2.0
    return [
        (yy >= start) & (yy < start + width),                       # horizontal band
        (xx >= start) & (xx < start + width),                       # vertical band
        (yy - center) ** 2 + (xx - center) ** 2 <= (side / 4.0) ** 2,  # centered disc
        np.abs(yy - xx) < width / 2.0,                              # diagonal stripe
    ]


def synth_dataset(n_per_class: int, side: int, seed: int, noise_amplitude: float = 0.1) -> Dataset:
    """Four geometric classes of side x side grayscale images plus noise.

    Shape intensity is 0.9 and noise is uniform in [0, noise_amplitude), so
    values stay inside [0, 1). Deterministic given the seed.
    """
    if side < 8:
        raise BadSize(f"side must be >= 8, got {side}")
    if n_per_class < 1:
        raise BadSize(f"n_per_class must be >= 1, got {n_per_class}")
    masks = _synth_masks(side)
    stream = RandomStream(derive_seed(seed, "synth"))
    samples = []
    for label, mask in enumerate(masks):
        base = 0.9 * mask[:, :, None].astype(np.float64)
        for _ in range(n_per_class):
            noise = stream.uniform((side, side, 1), 0.0, noise_amplitude)
            samples.append((base + noise, label))
    return Dataset(samples=samples, class_names=SYNTH_CLASS_NAMES)


def save_dataset_tree(dataset: Dataset, root) -> int:
    """Write a dataset as a class-per-directory PGM/PPM tree; returns file count."""
    root = Path(root)
    count = 0
    per_class_index = {name: 0 for name in dataset.class_names}
    try:
        for pixels, label in dataset.samples:
            name = dataset.class_names[label]
            sub = root / name
            sub.mkdir(parents=True, exist_ok=True)
            ext = ".pgm" if pixels.shape[2] == 1 else ".ppm"
            write_image(sub / f"{per_class_index[name]:04d}{ext}", Image(pixels=pixels))
            per_class_index[name] += 1
            count += 1
    except OSError as exc:
        raise IoWrite(f"cannot write dataset under {root}: {exc}") from exc
    return count
