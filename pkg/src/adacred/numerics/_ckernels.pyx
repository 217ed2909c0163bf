# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: im2col/col2im for convolution, fused layer norm, GELU.

Every function mirrors one in ``_pykernels`` with the same signature and
contiguous-array contract; ``kernels`` picks between them at import.
"""
import numpy as np
from libc.math cimport sqrt, tanh

ctypedef fused real:
    float
    double

cdef double _GELU_C = 0.7978845608028654  # sqrt(2 / pi)


def im2col(real[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * k * k, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, row, iy
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki
                            for ox in range(wo):
                                o[b, row, oy * wo + ox] = x[b, ch, iy, ox * stride + kj]
    return out


def col2im(real[:, :, ::1] cols, int c, int h, int w, int k, int stride):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, row, iy
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki
                            for ox in range(wo):
                                o[b, ch, iy, ox * stride + kj] += cols[b, row, oy * wo + ox]
    return out


def layer_norm_forward(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1]
    dtype = np.float32 if real is float else np.float64
    y = np.empty((m, d), dtype=dtype)
    xhat = np.empty((m, d), dtype=dtype)
    rstd = np.empty(m, dtype=dtype)
    cdef real[:, ::1] yv = y
    cdef real[:, ::1] xv = xhat
    cdef real[::1] rv = rstd
    cdef Py_ssize_t i, j
    cdef double mean, var, diff, r
    with nogil:
        for i in range(m):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - mean
                var += diff * diff
            var /= d
            r = 1.0 / sqrt(var + eps)
            rv[i] = <real>r
            for j in range(d):
                xv[i, j] = <real>((x[i, j] - mean) * r)
                yv[i, j] = xv[i, j] * gain[j] + bias[j]
    return y, xhat, rstd


def layer_norm_backward(real[:, ::1] g, real[:, ::1] xhat, real[::1] rstd, real[::1] gain):
    cdef Py_ssize_t m = g.shape[0], d = g.shape[1]
    dtype = np.float32 if real is float else np.float64
    dx = np.empty((m, d), dtype=dtype)
    dgain = np.zeros(d, dtype=np.float64)
    dbias = np.zeros(d, dtype=np.float64)
    cdef real[:, ::1] dxv = dx
    cdef double[::1] dgv = dgain
    cdef double[::1] dbv = dbias
    cdef Py_ssize_t i, j
    cdef double s1, s2, gg
    with nogil:
        for i in range(m):
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                gg = g[i, j] * gain[j]
                s1 += gg
                s2 += gg * xhat[i, j]
                dgv[j] += g[i, j] * xhat[i, j]
                dbv[j] += g[i, j]
            for j in range(d):
                gg = g[i, j] * gain[j]
                dxv[i, j] = <real>(rstd[i] * (gg - s1 / d - xhat[i, j] * s2 / d))
    return dx, dgain.astype(dtype), dbias.astype(dtype)


def gelu_forward(real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if real is float else np.float64
    y = np.empty(n, dtype=dtype)
    cdef real[::1] yv = y
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            yv[i] = <real>(0.5 * v * (1.0 + tanh(_GELU_C * (v + 0.044715 * v * v * v))))
    return y


def gelu_backward(real[::1] g, real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if real is float else np.float64
    dx = np.empty(n, dtype=dtype)
    cdef real[::1] dv = dx
    cdef double v, t, inner
    with nogil:
        for i in range(n):
            v = x[i]
            inner = _GELU_C * (v + 0.044715 * v * v * v)
            t = tanh(inner)
            dv[i] = <real>(g[i] * (0.5 * (1.0 + t)
                           + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)))
    return dx
