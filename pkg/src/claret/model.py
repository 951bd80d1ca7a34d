"""ClaRet architecture: schedules, block stacking, VGG-19 feature backbone,
freezing, parameter init and the forward pass.

A model is a config, a ParamSet and a flat layer plan. The plan is pure
structure (rebuildable from the config alone), so checkpoints only need to
store the config text plus the named tensors.

Head layout: a conv stage of [conv -> relu -> maxpool -> dropout] blocks
(pooling skipped once either spatial extent drops below 2), then flatten,
a dense stage of [dense -> relu -> dropout] blocks, and a final
dense -> softmax classifier. Filter counts follow powers of two between the
configured exponents; dense units are taken from the config verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .autodiff import Tape
from .errors import (
    BadRange,
    BadRate,
    ClassCountMismatch,
    ConfigError,
    DepthExceeded,
    InputTooSmall,
    NotDecreasing,
    ShapeMismatch,
)
from .params import ParamSet
from .rng import RandomStream, derive_seed

# conv widths of the VGG-19 feature stack; P marks a 2x2/stride-2 maxpool
VGG19_CHANNELS = (64, 64, "P", 128, 128, "P", 256, 256, 256, 256, "P",
                  512, 512, 512, 512, "P", 512, 512, 512, 512, "P")
VGG19_CONV_LAYERS = 16
_BACKBONES = ("none", "vgg19")


@dataclass
class ClaRetConfig:
    """Full architecture description; defaults follow the reference setup."""

    n_conv_blocks: int = 5
    filter_exponent_lo: int = 4
    filter_exponent_hi: int = 8
    kernel_size: int = 3
    dense_units: tuple[int, ...] = (1024, 512, 256, 64, 32)
    dropout_rate: float = 0.2
    n_classes: int = 4
    input_shape: tuple[int, int, int] = (224, 224, 3)
    backbone: str = "none"
    freeze_depth: int | None = None  # None = all backbone layers when present
    seed: int = 0
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.dense_units = tuple(int(u) for u in self.dense_units)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.class_names is not None:
            self.class_names = tuple(self.class_names)
        if self.n_conv_blocks < 1:
            raise ConfigError(f"n_conv_blocks must be >= 1, got {self.n_conv_blocks}")
        if self.filter_exponent_lo > self.filter_exponent_hi:
            raise BadRange(f"filter exponents {self.filter_exponent_lo} > {self.filter_exponent_hi}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if any(a <= b for a, b in zip(self.dense_units, self.dense_units[1:])):
            raise NotDecreasing(f"dense_units must be strictly decreasing, got {self.dense_units}")
        if any(u < 1 for u in self.dense_units):
            raise ConfigError(f"dense_units must be positive, got {self.dense_units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise BadRate(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise ConfigError(f"input_shape must be (H, W, C) positive, got {self.input_shape}")
        if self.backbone not in _BACKBONES:
            raise ConfigError(f"backbone must be one of {_BACKBONES}, got {self.backbone!r}")
        limit = VGG19_CONV_LAYERS if self.backbone == "vgg19" else 0
        if self.freeze_depth is not None and not 0 <= self.freeze_depth <= limit:
            raise DepthExceeded(f"freeze_depth {self.freeze_depth} exceeds {limit} backbone layers")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ClassCountMismatch(f"{len(self.class_names)} class names for {self.n_classes} classes")

    def resolved_freeze_depth(self) -> int:
        if self.freeze_depth is not None:
            return self.freeze_depth
        return VGG19_CONV_LAYERS if self.backbone == "vgg19" else 0


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | maxpool | dropout | flatten | dense | softmax
    weight: str | None = None
    bias: str | None = None
    rate: float = 0.0
    stride: int = 1


@dataclass
class Model:
    config: ClaRetConfig
    params: ParamSet
    layer_plan: list[LayerSpec] = field(default_factory=list)

    @property
    def dtype(self) -> np.dtype:
        for _, entry in self.params.items():
            return entry.value.dtype
        return np.dtype(np.float64)


def conv_filter_schedule(n_blocks: int, lo_exp: int, hi_exp: int) -> list[int]:
    """Filter counts 2**e with exponents spaced linearly from lo to hi.

    Exponents are rounded half-up; with a single block only 2**lo is used.
    """
    if lo_exp > hi_exp:
        raise BadRange(f"exponent range {lo_exp} > {hi_exp}")
    if n_blocks < 1:
        raise BadRange(f"n_blocks must be >= 1, got {n_blocks}")
    exps = np.linspace(lo_exp, hi_exp, n_blocks)
    return [2 ** int(math.floor(e + 0.5)) for e in exps]


def dense_unit_schedule(config: ClaRetConfig) -> list[int]:
    """Unit counts for the relu dense stage; the classifier layer is separate."""
    units = list(config.dense_units)
    if any(a <= b for a, b in zip(units, units[1:])):
        raise NotDecreasing(f"dense units must be strictly decreasing, got {units}")
    return units


def _vgg19_plan(input_shape) -> tuple[list[LayerSpec], tuple[int, int, int], dict[str, tuple]]:
    h, w, c = input_shape
    if h < 32 or w < 32:
        raise InputTooSmall(f"vgg19 needs spatial extents >= 32, got {h}x{w}")
    plan: list[LayerSpec] = []
    shapes: dict[str, tuple] = {}
    idx = 0
    for item in VGG19_CHANNELS:
        if item == "P":
            plan.append(LayerSpec("maxpool"))
            h, w = h // 2, w // 2
            continue
        idx += 1
        name = f"backbone.conv{idx:02d}"
        shapes[name + ".w"] = (3, 3, c, item)
        shapes[name + ".b"] = (item,)
        plan.append(LayerSpec("conv", weight=name + ".w", bias=name + ".b"))
        plan.append(LayerSpec("relu"))
        c = item
    return plan, (h, w, c), shapes


def _head_plan(config: ClaRetConfig, in_shape) -> tuple[list[LayerSpec], dict[str, tuple]]:
    h, w, c = in_shape
    k = config.kernel_size
    plan: list[LayerSpec] = []
    shapes: dict[str, tuple] = {}
    for i, filters in enumerate(conv_filter_schedule(
            config.n_conv_blocks, config.filter_exponent_lo, config.filter_exponent_hi), start=1):
        name = f"head.conv{i}"
        shapes[name + ".w"] = (k, k, c, filters)
        shapes[name + ".b"] = (filters,)
        plan.append(LayerSpec("conv", weight=name + ".w", bias=name + ".b"))
        plan.append(LayerSpec("relu"))
        if h >= 2 and w >= 2:
            plan.append(LayerSpec("maxpool"))
            h, w = h // 2, w // 2
        plan.append(LayerSpec("dropout", rate=config.dropout_rate))
        c = filters
    plan.append(LayerSpec("flatten"))
    fan = h * w * c
    for i, units in enumerate(dense_unit_schedule(config), start=1):
        name = f"head.dense{i}"
        shapes[name + ".w"] = (fan, units)
        shapes[name + ".b"] = (units,)
        plan.append(LayerSpec("dense", weight=name + ".w", bias=name + ".b"))
        plan.append(LayerSpec("relu"))
        plan.append(LayerSpec("dropout", rate=config.dropout_rate))
        fan = units
    shapes["head.out.w"] = (fan, config.n_classes)
    shapes["head.out.b"] = (config.n_classes,)
    plan.append(LayerSpec("dense", weight="head.out.w", bias="head.out.b"))
    plan.append(LayerSpec("softmax"))
    return plan, shapes


def _plan_and_shapes(config: ClaRetConfig):
    if config.backbone == "vgg19":
        bb_plan, feat_shape, bb_shapes = _vgg19_plan(config.input_shape)
    else:
        bb_plan, feat_shape, bb_shapes = [], config.input_shape, {}
    head_plan, head_shapes = _head_plan(config, feat_shape)
    return bb_plan + head_plan, {**bb_shapes, **head_shapes}


def build_layer_plan(config: ClaRetConfig) -> list[LayerSpec]:
    return _plan_and_shapes(config)[0]


def _he_init(shapes: dict[str, tuple], seed: int, dtype) -> ParamSet:
    """He-normal weights, zero biases; backbone and head draw from separate
    derived streams so a standalone feature build matches the full build."""
    dt = kernels.resolve_dtype(dtype)
    streams = {
        "backbone": RandomStream(derive_seed(seed, "init:backbone")),
        "head": RandomStream(derive_seed(seed, "init:head")),
    }
    params = ParamSet()
    for name, shape in shapes.items():
        stream = streams[name.split(".", 1)[0]]
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[:-1]))
            value = stream.normal(shape, std=math.sqrt(2.0 / fan_in)).astype(dt)
        else:
            value = np.zeros(shape, dtype=dt)
        params.add(name, value)
    return params


def build_claret(config: ClaRetConfig, dtype="single") -> Model:
    """Assemble the full model and apply the configured freeze depth."""
    plan, shapes = _plan_and_shapes(config)
    model = Model(config=config, params=_he_init(shapes, config.seed, dtype), layer_plan=plan)
    depth = config.resolved_freeze_depth()
    if depth:
        freeze_backbone(model, depth)
    return model


def build_vgg19_features(input_shape, seed: int, dtype="single") -> Model:
    """Feature extractor only: the 16-conv VGG-19 stack without any head."""
    plan, _, shapes = _vgg19_plan(tuple(int(s) for s in input_shape))
    config = ClaRetConfig(input_shape=tuple(int(s) for s in input_shape), backbone="vgg19", seed=seed)
    return Model(config=config, params=_he_init(shapes, seed, dtype), layer_plan=plan)


def freeze_backbone(model: Model, freeze_depth: int) -> Model:
    """Mark the first ``freeze_depth`` parameterized backbone layers frozen."""
    backbone_layers = [l for l in model.layer_plan
                       if l.kind in ("conv", "dense") and l.weight.startswith("backbone.")]
    if freeze_depth > len(backbone_layers) or freeze_depth < 0:
        raise DepthExceeded(f"freeze_depth {freeze_depth} exceeds {len(backbone_layers)} backbone layers")
    for i, layer in enumerate(backbone_layers):
        frozen = i < freeze_depth
        model.params[layer.weight].trainable = not frozen
        model.params[layer.bias].trainable = not frozen
    return model


def dropout(x: np.ndarray, rate: float, mode: str = "train", rng: RandomStream | None = None) -> np.ndarray:
    """Inverted dropout; eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise BadRate(f"dropout rate {rate} outside [0, 1)")
    if mode == "eval":
        return x
    mask = rng.keep_mask(x.shape, rate).astype(x.dtype)
    return (x * mask) * x.dtype.type(1.0 / (1.0 - rate))


def forward_eval(model: Model, x: np.ndarray) -> np.ndarray:
    """Run the layer plan in eval mode (dropout is skipped entirely)."""
    x = np.ascontiguousarray(x, dtype=model.dtype)
    for layer in model.layer_plan:
        if layer.kind == "conv":
            x = kernels.conv2d_same(x, model.params[layer.weight].value,
                                    model.params[layer.bias].value, layer.stride)
        elif layer.kind == "relu":
            x = kernels.relu(x)
        elif layer.kind == "maxpool":
            x, _ = kernels.maxpool2(x)
        elif layer.kind == "dropout":
            pass
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "dense":
            x = kernels.matmul(x, model.params[layer.weight].value) + model.params[layer.bias].value
        elif layer.kind == "softmax":
            x = kernels.softmax_rows(x)
        else:
            raise ShapeMismatch(f"unknown layer kind {layer.kind!r}")
    return x


def record_forward(model: Model, x: np.ndarray, tape: Tape, rng: RandomStream):
    """Train-mode forward recorded on a tape.

    Returns (output node id, leaf ids by parameter name). Frozen parameters
    become non-required leaves, so backward skips their whole subtree.
    """
    leaf_ids = {name: tape.leaf(entry.value, requires_grad=entry.trainable)
                for name, entry in model.params.items()}
    node = tape.leaf(np.ascontiguousarray(x, dtype=model.dtype), requires_grad=False)
    for layer in model.layer_plan:
        if layer.kind == "conv":
            node = tape.conv2d_same(node, leaf_ids[layer.weight], leaf_ids[layer.bias], layer.stride)
        elif layer.kind == "relu":
            node = tape.relu(node)
        elif layer.kind == "maxpool":
            node = tape.maxpool2(node)
        elif layer.kind == "dropout":
            node = tape.dropout(node, layer.rate, rng)
        elif layer.kind == "flatten":
            node = tape.flatten(node)
        elif layer.kind == "dense":
            node = tape.add_bias(tape.matmul(node, leaf_ids[layer.weight]), leaf_ids[layer.bias])
        elif layer.kind == "softmax":
            node = tape.softmax_rows(node)
        else:
            raise ShapeMismatch(f"unknown layer kind {layer.kind!r}")
    return node, leaf_ids


def predict(model: Model, batch: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for a [N, H, W, C] batch."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ShapeMismatch(f"batch must be [N,H,W,C], got {batch.shape}")
    if tuple(batch.shape[1:]) != tuple(model.config.input_shape):
        raise ShapeMismatch(f"batch shape {batch.shape[1:]} does not match input_shape {model.config.input_shape}")
    if not model.layer_plan or model.layer_plan[-1].kind != "softmax":
        raise ShapeMismatch("predict needs a full model ending in softmax")
    return forward_eval(model, batch)


def micro_config(seed: int = 0) -> ClaRetConfig:
    """Desk-scale 2-block config used by the gradient-check harness."""
    return ClaRetConfig(
        n_conv_blocks=2, filter_exponent_lo=2, filter_exponent_hi=4,
        dense_units=(16, 8), n_classes=4, input_shape=(8, 8, 1), seed=seed,
    )


__all__ = [
    "ClaRetConfig", "LayerSpec", "Model", "VGG19_CHANNELS", "VGG19_CONV_LAYERS",
    "conv_filter_schedule", "dense_unit_schedule", "build_layer_plan",
    "build_claret", "build_vgg19_features", "freeze_backbone", "dropout",
    "forward_eval", "record_forward", "predict", "micro_config",
]
