"""Differentiable operations.

Only scalar-with-tensor broadcasting is supported; any other shape mismatch
raises :class:`ShapeError`.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from .tensor import ShapeError, Tensor, as_tensor

PROB_EPS = 1e-6


def _node(data, parents, backward_fn, op):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, parents=parents if rg else (), backward_fn=backward_fn if rg else None, op=op)


def _same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + c, (a,), lambda g: (g,), "add_scalar")
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def abs_(a):
    s = np.sign(a.data)  # subgradient 0 at 0
    return _node(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def clamp(a, lo: float, hi: float):
    """Hard clamp; gradient passes only where the input is inside [lo, hi]."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def sum_(a):
    shape = a.shape
    return _node(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a):
    shape, n = a.shape, a.size
    return _node(a.data.mean(), (a,), lambda g: (np.full(shape, g / n, dtype=a.data.dtype),), "mean")


def mse(a, b):
    """Mean of squared differences."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return _node(np.mean(diff * diff), (a, b), bw, "mse")


def log_loss_terms(d_out, variant: str):
    """Mean of log(d) (``variant="log_d"``) or log(1-d) (``"log_1md"``).

    Probabilities are clamped to [1e-6, 1-1e-6] first; the gradient is zero
    where the clamp is active.
    """
    if np.isnan(d_out.data).any():
        raise ValueError("log_loss_terms: NaN probability")
    d = np.clip(d_out.data, PROB_EPS, 1.0 - PROB_EPS)
    inside = (d_out.data >= PROB_EPS) & (d_out.data <= 1.0 - PROB_EPS)
    n = d.size
    if variant == "log_d":
        val = np.log(d).mean()
        dd = 1.0 / d
    elif variant == "log_1md":
        val = np.log1p(-d).mean()
        dd = -1.0 / (1.0 - d)
    else:
        raise ValueError(f"unknown log-loss variant {variant!r}")
    return _node(val, (d_out,), lambda g: (g * dd * inside / n,), "log_" + variant)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x):
    m = x.data > 0
    return _node(x.data * m, (x,), lambda g: (g * m,), "relu")


def leaky_relu(x, slope: float = 0.2):
    k = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return _node(x.data * k, (x,), lambda g: (g * k,), "leaky_relu")


def sigmoid(x):
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x):
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def activation(x, kind: str, slope: float = 0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def concat_batch(a, b):
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_batch: non-batch shape mismatch {a.shape} vs {b.shape}")
    na = a.shape[0]
    return _node(np.concatenate([a.data, b.data], axis=0), (a, b), lambda g: (g[:na], g[na:]), "concat_batch")


def diff(x, axis: int):
    """Forward difference x[i+1] - x[i] along ``axis``."""
    n = x.shape[axis]
    if n < 2:
        raise ShapeError(f"diff: axis {axis} has length {n}")
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)

    def bw(g):
        out = np.zeros_like(x.data)
        out[hi] += g
        out[lo] -= g
        return (out,)

    return _node(x.data[hi] - x.data[lo], (x,), bw, "diff")


def spatial_mean(x):
    """(N, C, H, W) -> (N, C, 1, 1) mean over the spatial axes."""
    n, c, h, w = x.shape
    m = x.data.mean(axis=(2, 3), keepdims=True)
    return _node(m, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),), "spatial_mean")


def upsample2x(x):
    """Nearest-neighbour 2x spatial upsampling."""
    up = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _node(up, (x,), bw, "upsample2x")


def add_channel_bias(x, b):
    """x (N, C, H, W) + b (N, C) broadcast over the spatial axes."""
    if b.shape != x.shape[:2]:
        raise ShapeError(f"add_channel_bias: bias {b.shape} does not match {x.shape}")
    return _node(x.data + b.data[:, :, None, None], (x, b), lambda g: (g, g.sum(axis=(2, 3))), "add_channel_bias")


def linear(x, w, b):
    """x (N, F) @ w (F, G) + b (G,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if w.requires_grad else None
        return gx, gw, g.sum(axis=0)

    return _node(xd @ wd + b.data, (x, w, b), bw, "linear")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0):
    """2-D cross-correlation of (N, Cin, H, W) with (Cout, Cin, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kc, kh, kw = kernel.shape
    if kc != cin:
        raise ShapeError(f"conv2d: input {x.shape} has {cin} channels but kernel {kernel.shape} expects {kc}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be positive and padding non-negative")
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: kernel {kernel.shape} too large for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _kernels.im2col(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)
    w2 = kernel.data.reshape(cout, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
        gx = gk = None
        if x.requires_grad:
            dxp = _kernels.col2im(g2 @ w2, n, cin, hp, wp, kh, kw, stride, oh, ow)
            gx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if kernel.requires_grad:
            gk = (g2.T @ cols).reshape(kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return _node(out, parents, bw, "conv2d")
