"""Dense NHWC tensor kernels: creation, matmul, SAME convolution, pooling,
relu and row softmax, plus the matching gradient kernels.

Conventions pinned here so results are bit-reproducible run to run:
  - layout is row-major NHWC, rank <= 4;
  - SAME padding puts the odd extra element on the bottom/right;
  - 2x2/stride-2 max pooling drops a trailing odd row/column and breaks
    ties toward the first element in row-major window order;
  - matmul and the im2col convolution delegate the inner products to
    numpy/BLAS, which is deterministic for fixed shapes on one machine.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ChannelMismatch,
    LengthMismatch,
    RankExceeded,
    ShapeMismatch,
    SpatialTooSmall,
)

DTYPES = {"single": np.float32, "double": np.float64}

# above this many im2col elements, convolve sample by sample to bound memory
_COL_BUDGET = 1 << 24


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ShapeMismatch(f"unknown precision tag {dtype!r}")
        return np.dtype(DTYPES[dtype])
    d = np.dtype(dtype)
    if d not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeMismatch(f"unsupported dtype {d}")
    return d


def tensor_create(shape, fill=0.0, dtype="double") -> np.ndarray:
    """New tensor of ``shape`` filled with a scalar or a flat element list."""
    shape = tuple(int(s) for s in shape)
    if len(shape) > 4:
        raise RankExceeded(f"rank {len(shape)} exceeds 4")
    if any(s < 0 for s in shape):
        raise ShapeMismatch(f"negative extent in {shape}")
    dt = resolve_dtype(dtype)
    size = int(np.prod(shape)) if shape else 1
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=dt)
    data = np.asarray(fill, dtype=dt).reshape(-1)
    if data.size != size:
        raise LengthMismatch(f"{data.size} elements for shape {shape} (need {size})")
    return data.reshape(shape).copy()


def _check_same_dtype(*arrays):
    dts = {a.dtype for a in arrays}
    if len(dts) > 1:
        raise ShapeMismatch(f"mixed dtypes {sorted(str(d) for d in dts)}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product [m,k] x [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner extents differ: {a.shape} x {b.shape}")
    _check_same_dtype(a, b)
    return a @ b


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return out, lo, total - lo  # odd pad element goes to the bottom/right


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, _, _, cin = xp.shape
    col = np.empty((n, oh, ow, kh, kw, cin), dtype=xp.dtype)
    for dy in range(kh):
        for dx in range(kw):
            col[:, :, :, dy, dx, :] = xp[:, dy : dy + oh * stride : stride, dx : dx + ow * stride : stride, :]
    return col.reshape(n * oh * ow, kh * kw * cin)


def _col2im(dcol: np.ndarray, xp_shape, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, _, _, cin = xp_shape
    dxp = np.zeros(xp_shape, dtype=dcol.dtype)
    dcol = dcol.reshape(n, oh, ow, kh, kw, cin)
    for dy in range(kh):
        for dx in range(kw):
            dxp[:, dy : dy + oh * stride : stride, dx : dx + ow * stride : stride, :] += dcol[:, :, :, dy, dx, :]
    return dxp


def _conv_checks(x, k, b, stride):
    if x.ndim != 4:
        raise ShapeMismatch(f"conv input must be [N,H,W,C], got {x.shape}")
    if k.ndim != 4:
        raise ShapeMismatch(f"conv kernel must be [kh,kw,Cin,Cout], got {k.shape}")
    if b.ndim != 1 or b.shape[0] != k.shape[3]:
        raise ShapeMismatch(f"bias shape {b.shape} does not match Cout {k.shape[3]}")
    if x.shape[3] != k.shape[2]:
        raise ChannelMismatch(f"input has {x.shape[3]} channels, kernel expects {k.shape[2]}")
    if k.shape[0] < 1 or k.shape[1] < 1:
        raise ShapeMismatch(f"kernel spatial extents must be >= 1, got {k.shape[:2]}")
    if stride < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    _check_same_dtype(x, k, b)


def conv2d_same(x: np.ndarray, k: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """SAME-padded convolution: [N,H,W,Cin] -> [N,ceil(H/s),ceil(W/s),Cout]."""
    _conv_checks(x, k, b, stride)
    n, h, w, _ = x.shape
    kh, kw, cin, cout = k.shape
    oh, pt, pb = _same_pads(h, kh, stride)
    ow, pl, pr = _same_pads(w, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    k2 = k.reshape(kh * kw * cin, cout)
    if n * oh * ow * kh * kw * cin <= _COL_BUDGET:
        out = _im2col(xp, kh, kw, stride, oh, ow) @ k2
    else:
        out = np.empty((n * oh * ow, cout), dtype=x.dtype)
        rows = oh * ow
        for i in range(n):
            out[i * rows : (i + 1) * rows] = _im2col(xp[i : i + 1], kh, kw, stride, oh, ow) @ k2
    out += b
    return out.reshape(n, oh, ow, cout)


def conv2d_same_backward(g: np.ndarray, x: np.ndarray, k: np.ndarray, stride: int = 1,
                         need_dx: bool = True, need_dk: bool = True, need_db: bool = True):
    """Gradients of conv2d_same: (dx, dk, db) for upstream ``g``.

    Pieces with a False flag are skipped and returned as None; that is what
    lets a frozen backbone avoid its whole backward cost.
    """
    n, h, w, _ = x.shape
    kh, kw, cin, cout = k.shape
    oh, pt, pb = _same_pads(h, kh, stride)
    ow, pl, pr = _same_pads(w, kw, stride)
    g2 = g.reshape(n * oh * ow, cout)
    db = g2.sum(axis=0) if need_db else None
    if not (need_dx or need_dk):
        return None, None, db
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    k2 = k.reshape(kh * kw * cin, cout)
    dk2 = None
    dxp = None
    if n * oh * ow * kh * kw * cin <= _COL_BUDGET:
        if need_dk:
            dk2 = _im2col(xp, kh, kw, stride, oh, ow).T @ g2
        if need_dx:
            dxp = _col2im(g2 @ k2.T, xp.shape, kh, kw, stride, oh, ow)
    else:
        if need_dk:
            dk2 = np.zeros((kh * kw * cin, cout), dtype=x.dtype)
        if need_dx:
            dxp = np.empty(xp.shape, dtype=x.dtype)
        rows = oh * ow
        for i in range(n):
            g_i = g2[i * rows : (i + 1) * rows]
            if need_dk:
                dk2 += _im2col(xp[i : i + 1], kh, kw, stride, oh, ow).T @ g_i
            if need_dx:
                dxp[i : i + 1] = _col2im(g_i @ k2.T, (1,) + xp.shape[1:], kh, kw, stride, oh, ow)
    dx = np.ascontiguousarray(dxp[:, pt : pt + h, pl : pl + w, :]) if need_dx else None
    dk = dk2.reshape(k.shape) if need_dk else None
    return dx, dk, db


def maxpool2(x: np.ndarray):
    """2x2/stride-2 max pooling; returns (out, argmax) with floor semantics.

    The argmax is the window-local index 0..3 in row-major order and is what
    the backward pass routes gradient to (first index wins ties).
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool input must be [N,H,W,C], got {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise SpatialTooSmall(f"spatial extents {h}x{w} are below the 2x2 window")
    oh, ow = h // 2, w // 2
    windows = (
        x[:, : 2 * oh, : 2 * ow, :]
        .reshape(n, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, oh, ow, c, 4)
    )
    idx = np.argmax(windows, axis=4)
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2_backward(g: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    """Scatter upstream gradient back to the stored per-window argmax."""
    n, h, w, c = in_shape
    oh, ow = h // 2, w // 2
    g4 = np.zeros((n, oh, ow, c, 4), dtype=g.dtype)
    np.put_along_axis(g4, idx[..., None].astype(np.int64), g[..., None], axis=4)
    dx = np.zeros(in_shape, dtype=g.dtype)
    dx[:, : 2 * oh, : 2 * ow, :] = (
        g4.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * oh, 2 * ow, c)
    )
    return dx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly x == 0
    return g * (x > 0)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a rank-2 tensor, shifted by the row max."""
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax_rows needs rank 2, got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeMismatch("softmax_rows needs at least one column")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(g: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (g - (g * p).sum(axis=1, keepdims=True))
