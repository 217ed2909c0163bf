"""Pure numpy versions of the compiled kernels (same signatures)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GELU_C = np.sqrt(2.0 / np.pi)


def im2col(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: n, c, ho, wo, k, k  ->  n, c, k, k, ho, wo
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(cols, c, h, w, k, stride):
    n = cols.shape[0]
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    blocks = cols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride] += blocks[:, :, ki, kj]
    return out


def layer_norm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    diff = x - mean
    var = (diff * diff).mean(axis=1)
    rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = diff * rstd[:, None]
    return xhat * gain + bias, xhat, rstd


def layer_norm_backward(g, xhat, rstd, gain):
    d = g.shape[1]
    gg = g * gain
    s1 = gg.sum(axis=1, keepdims=True)
    s2 = (gg * xhat).sum(axis=1, keepdims=True)
    dx = rstd[:, None] * (gg - s1 / d - xhat * s2 / d)
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def gelu_forward(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_backward(g, x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x))
