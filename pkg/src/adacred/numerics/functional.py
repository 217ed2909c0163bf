"""Differentiable layers built on the tape: softmax, layer norm, conv, GELU..."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ParameterError
from . import kernels
from .tensor import Tensor, _result, as_tensor

LN_EPS = 1e-5


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), fn)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise DimensionError("log_softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), fn)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine params must have shape ({d},)")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, rstd = kernels.layer_norm_forward(x2, gain.data, bias.data, eps)

    def fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d), dtype=x2.dtype)
        dx, dgain, dbias = kernels.layer_norm_backward(g2, xhat, rstd, gain.data)
        return dx.reshape(x.shape), dgain, dbias

    return _result(y.reshape(x.shape), (x, gain, bias), fn)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    y = kernels.gelu_forward(flat).reshape(x.shape)

    def fn(g):
        gf = np.ascontiguousarray(g.reshape(-1), dtype=flat.dtype)
        return (kernels.gelu_backward(gf, flat).reshape(x.shape),)

    return _result(y, (x,), fn)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Valid cross-correlation.

    ``x`` is (C, H, W) or (N, C, H, W); ``weight`` is (C_out, C, k, k).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects (N,)C,H,W input and C_out,C,k,k kernels")
    n, c, h, w = xd.shape
    c_out, c_in, k, k2 = weight.shape
    if c_in != c or k != k2:
        raise DimensionError(f"conv2d kernel {weight.shape} incompatible with input {xd.shape}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if k > h or k > w:
        raise DimensionError(f"kernel {k}x{k} larger than image {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = kernels.im2col(np.ascontiguousarray(xd), k, stride)  # n, c*k*k, ho*wo
    wmat = weight.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols)  # n, c_out, ho*wo
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents = (x, weight, bias)
    out = out.reshape(n, c_out, ho, wo)
    if single:
        out = out[0]

    def fn(g):
        g3 = g.reshape(n, c_out, ho * wo)
        gw = np.einsum("nop,nqp->oq", g3, cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.ascontiguousarray(np.matmul(wmat.T, g3), dtype=xd.dtype)
            gx = kernels.col2im(gcols, c, h, w, k, stride)
            if single:
                gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return _result(out, parents, fn)


def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n})")

    def fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), fn)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``; gradient passed to ``soft`` unchanged."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=soft.dtype)
    if hard.shape != soft.shape:
        raise DimensionError("straight_through: hard and soft shapes differ")
    return _result(hard, (soft,), lambda g: (g,))


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted mean of ``-log softmax(logits)[target]`` over leading positions."""
    logits = as_tensor(logits)
    k = logits.shape[-1]
    z = logits.data.reshape(-1, k)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != z.shape[0]:
        raise DimensionError("cross_entropy: logits/targets count mismatch")
    w = np.ones(t.shape[0], dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: every position is masked out")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    rows = np.arange(t.shape[0])
    nll = lse - zs[rows, t]
    loss = np.asarray((w * nll).sum() / total, dtype=z.dtype)

    def fn(g):
        p = np.exp(zs - lse[:, None])
        p[rows, t] -= 1.0
        return ((p * (w / total)[:, None] * g).reshape(logits.shape),)

    return _result(loss, (logits,), fn)


def logit(p, eps: float = 1e-6) -> Tensor:
    """``log(p / (1 - p))`` with ``p`` clipped to ``[eps, 1 - eps]``."""
    p = as_tensor(p)
    q = np.clip(p.data, eps, 1.0 - eps)
    out = (np.log(q) - np.log1p(-q)).astype(p.dtype, copy=False)
    return _result(out, (p,), lambda g: (g / (q * (1.0 - q)),))
