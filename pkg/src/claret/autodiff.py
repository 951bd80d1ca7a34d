"""Reverse-mode differentiation over the tensor kernels.

A Tape records Nodes in execution order; ids are dense list indices, so
parents always precede their consumers and the backward sweep is a single
reverse pass. Gradient flow is pruned with a requires flag propagated from
the leaves, which is what makes frozen-backbone training cheap: nothing
below the last trainable leaf is differentiated.

Pinned conventions:
  - relu gradient is 0 at exactly 0;
  - maxpool routes gradient to the first maximal element in row-major
    window order (the index saved at forward time);
  - cross_entropy directly after softmax_rows is differentiated as the
    fused form (p - onehot(y)) / N, bypassing the softmax jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BadRate, LabelOutOfRange, NonFinite, NotScalar, ShapeMismatch
from .rng import RandomStream, derive_seed


@dataclass
class Node:
    id: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    requires: bool
    aux: dict = field(default=None)
    grad: np.ndarray = field(default=None)


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _add(self, op: str, parents: tuple[int, ...], value: np.ndarray, aux: dict | None = None,
             requires: bool | None = None) -> int:
        if requires is None:
            requires = any(self.nodes[p].requires for p in parents)
        node = Node(id=len(self.nodes), op=op, parents=parents, value=value, requires=requires, aux=aux)
        self.nodes.append(node)
        return node.id

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    # -- recorded operations --------------------------------------------------

    def leaf(self, value: np.ndarray, requires_grad: bool = True) -> int:
        return self._add("create", (), np.asarray(value), requires=requires_grad)

    def matmul(self, a: int, b: int) -> int:
        out = kernels.matmul(self.value(a), self.value(b))
        return self._add("matmul", (a, b), out)

    def conv2d_same(self, x: int, k: int, b: int, stride: int = 1) -> int:
        out = kernels.conv2d_same(self.value(x), self.value(k), self.value(b), stride)
        return self._add("conv2d_same", (x, k, b), out, aux={"stride": stride})

    def maxpool2(self, x: int) -> int:
        out, idx = kernels.maxpool2(self.value(x))
        return self._add("maxpool2", (x,), out, aux={"argmax": idx, "in_shape": self.value(x).shape})

    def relu(self, x: int) -> int:
        return self._add("relu", (x,), kernels.relu(self.value(x)))

    def softmax_rows(self, x: int) -> int:
        return self._add("softmax_rows", (x,), kernels.softmax_rows(self.value(x)))

    def dropout(self, x: int, rate: float, rng: RandomStream) -> int:
        """Train-mode inverted dropout; the mask is saved for backward."""
        if not 0.0 <= rate < 1.0:
            raise BadRate(f"dropout rate {rate} outside [0, 1)")
        xv = self.value(x)
        mask = rng.keep_mask(xv.shape, rate).astype(xv.dtype)
        scale = xv.dtype.type(1.0 / (1.0 - rate))
        out = (xv * mask) * scale
        return self._add("dropout", (x,), out, aux={"mask": mask, "rate": rate})

    def add_bias(self, x: int, b: int) -> int:
        xv, bv = self.value(x), self.value(b)
        if bv.ndim != 1 or bv.shape[0] != xv.shape[-1]:
            raise ShapeMismatch(f"bias {bv.shape} does not match trailing extent of {xv.shape}")
        kernels._check_same_dtype(xv, bv)
        return self._add("add_bias", (x, b), xv + bv)

    def flatten(self, x: int) -> int:
        xv = self.value(x)
        out = xv.reshape(xv.shape[0], -1)
        return self._add("flatten", (x,), out, aux={"in_shape": xv.shape})

    def cross_entropy(self, probs: int, labels) -> int:
        pv = self.value(probs)
        labels = np.asarray(labels, dtype=np.int64)
        if pv.ndim != 2 or labels.shape != (pv.shape[0],):
            raise ShapeMismatch(f"probs {pv.shape} vs labels {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= pv.shape[1]):
            raise LabelOutOfRange(f"labels must lie in [0, {pv.shape[1]})")
        picked = pv[np.arange(pv.shape[0]), labels]
        loss = -np.log(np.maximum(picked, pv.dtype.type(1e-12))).mean(dtype=pv.dtype)
        return self._add("cross_entropy", (probs,), np.asarray(loss, dtype=pv.dtype),
                         aux={"labels": labels})

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), self.value(x) * c, aux={"factor": c})

    def transpose(self, x: int) -> int:
        xv = self.value(x)
        if xv.ndim != 2:
            raise ShapeMismatch(f"transpose needs rank 2, got {xv.shape}")
        return self._add("transpose", (x,), np.ascontiguousarray(xv.T))

    def sum(self, x: int) -> int:
        xv = self.value(x)
        return self._add("sum", (x,), np.asarray(xv.sum(), dtype=xv.dtype))

    # -- verification helpers --------------------------------------------------

    def replay(self) -> bool:
        """Recompute every non-leaf value from its parents; True iff all match bitwise."""
        for n in self.nodes:
            if n.op == "create":
                continue
            vals = [self.nodes[p].value for p in n.parents]
            if n.op == "matmul":
                again = kernels.matmul(*vals)
            elif n.op == "conv2d_same":
                again = kernels.conv2d_same(*vals, n.aux["stride"])
            elif n.op == "maxpool2":
                again, _ = kernels.maxpool2(vals[0])
            elif n.op == "relu":
                again = kernels.relu(vals[0])
            elif n.op == "softmax_rows":
                again = kernels.softmax_rows(vals[0])
            elif n.op == "dropout":
                scale = vals[0].dtype.type(1.0 / (1.0 - n.aux["rate"]))
                again = (vals[0] * n.aux["mask"]) * scale
            elif n.op == "add_bias":
                again = vals[0] + vals[1]
            elif n.op == "flatten":
                again = vals[0].reshape(vals[0].shape[0], -1)
            elif n.op == "cross_entropy":
                labels = n.aux["labels"]
                picked = vals[0][np.arange(vals[0].shape[0]), labels]
                again = np.asarray(-np.log(np.maximum(picked, vals[0].dtype.type(1e-12))).mean(dtype=vals[0].dtype))
            elif n.op == "scale":
                again = vals[0] * n.aux["factor"]
            elif n.op == "transpose":
                again = np.ascontiguousarray(vals[0].T)
            elif n.op == "sum":
                again = np.asarray(vals[0].sum(), dtype=vals[0].dtype)
            else:
                return False
            if again.shape != n.value.shape or not np.array_equal(again, n.value):
                return False
        return True


def _accumulate(tape: Tape, pid: int, g: np.ndarray) -> None:
    p = tape.nodes[pid]
    if not p.requires:
        return
    p.grad = g if p.grad is None else p.grad + g


def _back_matmul(tape, node, g):
    a, b = node.parents
    if tape.nodes[a].requires:
        _accumulate(tape, a, g @ tape.nodes[b].value.T)
    if tape.nodes[b].requires:
        _accumulate(tape, b, tape.nodes[a].value.T @ g)


def _back_conv(tape, node, g):
    x, k, b = node.parents
    need = [tape.nodes[i].requires for i in (x, k, b)]
    dx, dk, db = kernels.conv2d_same_backward(
        g, tape.nodes[x].value, tape.nodes[k].value, node.aux["stride"],
        need_dx=need[0], need_dk=need[1], need_db=need[2])
    if need[0]:
        _accumulate(tape, x, dx)
    if need[1]:
        _accumulate(tape, k, dk)
    if need[2]:
        _accumulate(tape, b, db)


def _back_maxpool(tape, node, g):
    _accumulate(tape, node.parents[0], kernels.maxpool2_backward(g, node.aux["argmax"], node.aux["in_shape"]))


def _back_relu(tape, node, g):
    _accumulate(tape, node.parents[0], kernels.relu_backward(g, tape.nodes[node.parents[0]].value))


def _back_softmax(tape, node, g):
    _accumulate(tape, node.parents[0], kernels.softmax_rows_backward(g, node.value))


def _back_dropout(tape, node, g):
    mask, rate = node.aux["mask"], node.aux["rate"]
    scale = g.dtype.type(1.0 / (1.0 - rate))
    _accumulate(tape, node.parents[0], (g * mask) * scale)


def _back_add_bias(tape, node, g):
    x, b = node.parents
    if tape.nodes[x].requires:
        _accumulate(tape, x, g)
    if tape.nodes[b].requires:
        _accumulate(tape, b, g.reshape(-1, g.shape[-1]).sum(axis=0))


def _back_flatten(tape, node, g):
    _accumulate(tape, node.parents[0], g.reshape(node.aux["in_shape"]))


def _back_cross_entropy(tape, node, g):
    probs_node = tape.nodes[node.parents[0]]
    labels = node.aux["labels"]
    n = probs_node.value.shape[0]
    if probs_node.op == "softmax_rows":
        # fused softmax + cross-entropy: d loss / d logits = (p - onehot) / N
        logits_id = probs_node.parents[0]
        if tape.nodes[logits_id].requires:
            d = probs_node.value.copy()
            d[np.arange(n), labels] -= 1
            _accumulate(tape, logits_id, d * (g / probs_node.value.dtype.type(n)))
        return
    if probs_node.requires:
        p = probs_node.value
        picked = p[np.arange(n), labels]
        dp = np.zeros_like(p)
        live = picked > 1e-12  # clamped rows are locally constant
        dp[np.arange(n)[live], labels[live]] = -1.0 / (n * picked[live])
        _accumulate(tape, node.parents[0], dp * g)


def _back_scale(tape, node, g):
    _accumulate(tape, node.parents[0], g * node.aux["factor"])


def _back_transpose(tape, node, g):
    _accumulate(tape, node.parents[0], np.ascontiguousarray(g.T))


def _back_sum(tape, node, g):
    x = tape.nodes[node.parents[0]]
    _accumulate(tape, node.parents[0], np.full(x.value.shape, g, dtype=x.value.dtype))


BACKWARD_RULES = {
    "matmul": _back_matmul,
    "conv2d_same": _back_conv,
    "maxpool2": _back_maxpool,
    "relu": _back_relu,
    "softmax_rows": _back_softmax,
    "dropout": _back_dropout,
    "add_bias": _back_add_bias,
    "flatten": _back_flatten,
    "cross_entropy": _back_cross_entropy,
    "scale": _back_scale,
    "transpose": _back_transpose,
    "sum": _back_sum,
}


def backward(tape: Tape, loss: int) -> dict[int, np.ndarray]:
    """Propagate d(loss) through the tape; returns leaf-id -> gradient.

    Disconnected or frozen leaves get zero gradients, not errors.
    """
    loss_node = tape.nodes[loss]
    if loss_node.value.ndim != 0:
        raise NotScalar(f"loss node has rank {loss_node.value.ndim}, need a rank-0 scalar")
    for n in tape.nodes:
        n.grad = None
    loss_node.grad = np.ones((), dtype=loss_node.value.dtype)
    for n in reversed(tape.nodes[: loss + 1]):
        if n.grad is None or n.op == "create":
            continue
        BACKWARD_RULES[n.op](tape, n, n.grad)
    return {
        n.id: (n.grad if n.grad is not None else np.zeros_like(n.value))
        for n in tape.nodes
        if n.op == "create"
    }


def grad_check(loss_fn, params, eps: float = 1e-5, seed: int = 0, coords_per_tensor: int = 64) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must rebuild the forward pass from the current contents of
    ``params`` and return ``(tape, loss_id, leaf_ids)`` where ``leaf_ids``
    maps parameter names to their leaf nodes. It has to be a pure function
    of the parameters (recreate any dropout stream from a fixed seed so the
    mask is frozen across evaluations).

    Every trainable tensor must be double precision. Tensors larger than
    ``coords_per_tensor`` are subsampled at seeded coordinates.
    """
    if eps <= 0:
        raise ShapeMismatch(f"eps must be positive, got {eps}")

    def loss_value() -> float:
        t, lid, _ = loss_fn()
        v = float(t.nodes[lid].value)
        if not np.isfinite(v):
            raise NonFinite("loss evaluated to a non-finite value")
        return v

    tape, loss_id, leaf_ids = loss_fn()
    if not np.isfinite(float(tape.nodes[loss_id].value)):
        raise NonFinite("loss evaluated to a non-finite value")
    grads = backward(tape, loss_id)

    picker = RandomStream(derive_seed(seed, "grad-check-coords"))
    worst = 0.0
    for name in params.trainable_names():
        theta = params[name].value
        if theta.dtype != np.float64:
            raise ShapeMismatch(f"grad_check needs double precision, {name} is {theta.dtype}")
        analytic = grads[leaf_ids[name]]
        if theta.size <= coords_per_tensor:
            coords = np.arange(theta.size)
        else:
            coords = picker.permutation(theta.size)[:coords_per_tensor]
        for i in coords:
            orig = theta.flat[i]
            theta.flat[i] = orig + eps
            lp = loss_value()
            theta.flat[i] = orig - eps
            lm = loss_value()
            theta.flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            a = float(analytic.flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
