"""Per-layer-family gradient verification against central differences.

Each family builds a small double-precision problem, projects the layer
output to a scalar through fixed random weights (so every coordinate gets a
distinct nonzero cotangent) and compares analytic gradients with finite
differences. Nonsmooth layers are kept away from their kinks: relu inputs
stay off 0, maxpool windows are built with pairwise gaps far above the
finite-difference step, dropout reuses one frozen mask.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, grad_check
from .model import build_claret, micro_config, record_forward
from .params import ParamSet
from .rng import RandomStream, derive_seed

TOLERANCE = 1e-4

FAMILIES = ("conv", "dense", "relu", "softmax_xent", "dropout", "maxpool", "full_model")


def _scalarize(tape: Tape, y: int, seed: int) -> int:
    """Reduce a node to rank-0 via u @ (y @ v) with fixed random u, v."""
    if tape.value(y).ndim != 2:
        y = tape.flatten(y)
    rows, cols = tape.value(y).shape
    cot = RandomStream(derive_seed(seed, "cotangent"))
    v = tape.leaf(cot.uniform((cols, 1), 0.5, 1.5), requires_grad=False)
    u = tape.leaf(cot.uniform((1, rows), 0.5, 1.5), requires_grad=False)
    return tape.sum(tape.matmul(u, tape.matmul(y, v)))


def check_conv(seed: int) -> float:
    data = RandomStream(derive_seed(seed, "conv-data"))
    params = ParamSet()
    params.add("x", data.normal((2, 5, 5, 2)))
    params.add("k", data.normal((3, 3, 2, 3), std=0.5))
    params.add("b", data.normal((3,), std=0.5))

    def loss_fn():
        t = Tape()
        ids = {n: t.leaf(params[n].value) for n in ("x", "k", "b")}
        y = t.conv2d_same(ids["x"], ids["k"], ids["b"], 1)
        return t, _scalarize(t, y, seed), ids

    return grad_check(loss_fn, params, seed=seed)


def check_dense(seed: int) -> float:
    data = RandomStream(derive_seed(seed, "dense-data"))
    params = ParamSet()
    params.add("x", data.normal((4, 6)))
    params.add("w", data.normal((6, 3), std=0.5))
    params.add("b", data.normal((3,), std=0.5))

    def loss_fn():
        t = Tape()
        ids = {n: t.leaf(params[n].value) for n in ("x", "w", "b")}
        y = t.add_bias(t.matmul(ids["x"], ids["w"]), ids["b"])
        return t, _scalarize(t, y, seed), ids

    return grad_check(loss_fn, params, seed=seed)


def check_relu(seed: int) -> float:
    data = RandomStream(derive_seed(seed, "relu-data"))
    magnitude = data.uniform((4, 6), 0.1, 1.0)  # stay off the kink at 0
    sign = np.where(data.keep_mask((4, 6), 0.5), 1.0, -1.0)
    params = ParamSet()
    params.add("x", magnitude * sign)

    def loss_fn():
        t = Tape()
        x = t.leaf(params["x"].value)
        return t, _scalarize(t, t.relu(x), seed), {"x": x}

    return grad_check(loss_fn, params, seed=seed)


def check_softmax_xent(seed: int) -> float:
    data = RandomStream(derive_seed(seed, "softmax-data"))
    params = ParamSet()
    params.add("z", data.normal((5, 4)))
    labels = np.array([0, 1, 2, 3, 0])

    def loss_fn():
        t = Tape()
        z = t.leaf(params["z"].value)
        return t, t.cross_entropy(t.softmax_rows(z), labels), {"z": z}

    return grad_check(loss_fn, params, seed=seed)


def check_dropout(seed: int) -> float:
    data = RandomStream(derive_seed(seed, "dropout-data"))
    params = ParamSet()
    params.add("x", data.normal((4, 8)))

    def loss_fn():
        t = Tape()
        x = t.leaf(params["x"].value)
        # recreated from a fixed seed per evaluation: the mask is frozen
        mask_rng = RandomStream(derive_seed(seed, "dropout-mask"))
        return t, _scalarize(t, t.dropout(x, 0.2, mask_rng), seed), {"x": x}

    return grad_check(loss_fn, params, seed=seed)


def check_maxpool(seed: int) -> float:
    n, h, w, c = 2, 6, 6, 3
    oh, ow = h // 2, w // 2
    stream = RandomStream(derive_seed(seed, "maxpool-data"))
    nwin = n * oh * ow * c
    # per window: a random permutation of {0, .25, .5, .75} over a small random
    # base, so values are pairwise >= 0.15 apart and no argmax can flip
    offsets = np.argsort(stream.raw(nwin * 4).reshape(nwin, 4), axis=1).astype(np.float64) * 0.25
    base = stream.uniform((nwin, 1), 0.0, 0.1)
    windows = (base + offsets).reshape(n, oh, ow, c, 4)
    x0 = windows.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
    params = ParamSet()
    params.add("x", x0)

    def loss_fn():
        t = Tape()
        x = t.leaf(params["x"].value)
        return t, _scalarize(t, t.maxpool2(x), seed), {"x": x}

    return grad_check(loss_fn, params, seed=seed)


def check_full_model(seed: int) -> float:
    """End-to-end check of the 2-block micro model with frozen dropout masks."""
    model = build_claret(micro_config(seed), dtype="double")
    data = RandomStream(derive_seed(seed, "full-data"))
    x0 = data.uniform((2, 8, 8, 1))
    labels = np.array([1, 3])

    def loss_fn():
        t = Tape()
        rng = RandomStream(derive_seed(seed, "full-dropout"))
        out, leaves = record_forward(model, x0, t, rng)
        return t, t.cross_entropy(out, labels), leaves

    return grad_check(loss_fn, model.params, seed=seed)


_CHECKS = {
    "conv": check_conv,
    "dense": check_dense,
    "relu": check_relu,
    "softmax_xent": check_softmax_xent,
    "dropout": check_dropout,
    "maxpool": check_maxpool,
    "full_model": check_full_model,
}


def run_gradcheck(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per layer family, in a fixed order."""
    return {family: _CHECKS[family](seed) for family in FAMILIES}
