"""Shape-handling adapters over the compiled kernels.

Exposes the same API as numpy_backend so callers never care which backend
is active.
"""

import numpy as np

from . import _cykernels as _ck

NAME = "cython"


def _flat(x):
    return np.ascontiguousarray(x).reshape(-1)


def gelu(x):
    xf = _flat(x)
    out = np.empty_like(xf)
    _ck.gelu_(xf, out)
    return out.reshape(x.shape)


def gelu_grad(x, dy):
    xf = _flat(x)
    dx = np.empty_like(xf)
    _ck.gelu_grad_(xf, _flat(dy), dx)
    return dx.reshape(x.shape)


def layernorm(x, weight, bias, eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    mean = np.empty(x.shape[0], dtype=x.dtype)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _ck.layernorm_(x, np.ascontiguousarray(weight), np.ascontiguousarray(bias),
                   float(eps), y, mean, rstd)
    return y, mean, rstd


def layernorm_grad(x, weight, mean, rstd, dy):
    x = np.ascontiguousarray(x)
    dx = np.empty_like(x)
    dw = np.zeros(x.shape[1], dtype=np.float64)
    db = np.zeros(x.shape[1], dtype=np.float64)
    _ck.layernorm_grad_(x, np.ascontiguousarray(weight), mean, rstd,
                        np.ascontiguousarray(dy), dx, dw, db)
    return dx, dw.astype(x.dtype), db.astype(x.dtype)


def softmax_rows(x):
    x = np.ascontiguousarray(x)
    p = np.empty_like(x)
    _ck.softmax_rows_(x, p)
    return p


def softmax_rows_grad(p, dy):
    p = np.ascontiguousarray(p)
    dx = np.empty_like(p)
    _ck.softmax_rows_grad_(p, np.ascontiguousarray(dy), dx)
    return dx


def stamp_gaussian_max(canvas, xs, ys, sigma):
    _ck.stamp_gaussian_max_(canvas,
                            np.ascontiguousarray(xs, dtype=np.float64),
                            np.ascontiguousarray(ys, dtype=np.float64),
                            float(sigma))
