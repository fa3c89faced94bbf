"""Pure-numpy implementations of the elementwise hot kernels.

Used when the compiled extension is unavailable (or forced via
``VITGRADE_KERNELS=numpy``). Reductions accumulate in float64 regardless of
the input dtype so both backends stay numerically close.
"""

import numpy as np
from scipy.special import erf

NAME = "numpy"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact error-function GELU: 0.5*x*(1 + erf(x/sqrt(2)))."""
    out = 0.5 * x * (1.0 + erf(x * _INV_SQRT2))
    return out.astype(x.dtype, copy=False)


def gelu_grad(x, dy):
    """dy * d/dx GELU(x)."""
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    d = 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi
    return (dy * d).astype(x.dtype, copy=False)


def layernorm(x, weight, bias, eps):
    """Row-wise layer norm of a 2-D array.

    Returns (y, mean, rstd); mean/rstd are kept for the backward pass.
    """
    mean = x.mean(axis=1, dtype=np.float64)
    var = np.square(x - mean[:, None]).mean(axis=1, dtype=np.float64)
    rstd = 1.0 / np.sqrt(var + eps)
    mean = mean.astype(x.dtype)
    rstd = rstd.astype(x.dtype)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = (xhat * weight + bias).astype(x.dtype, copy=False)
    return y, mean, rstd


def layernorm_grad(x, weight, mean, rstd, dy):
    """Backward of :func:`layernorm`; returns (dx, dweight, dbias)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dweight = np.sum(dy * xhat, axis=0, dtype=np.float64).astype(x.dtype)
    dbias = np.sum(dy, axis=0, dtype=np.float64).astype(x.dtype)
    dxhat = dy * weight
    m1 = dxhat.mean(axis=1, dtype=np.float64).astype(x.dtype)
    m2 = (dxhat * xhat).mean(axis=1, dtype=np.float64).astype(x.dtype)
    dx = rstd[:, None] * (dxhat - m1[:, None] - xhat * m2[:, None])
    return dx.astype(x.dtype, copy=False), dweight, dbias


def softmax_rows(x):
    """Row-wise softmax of a 2-D array, max-subtracted for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, dtype=np.float64)[:, None]
    return (e / denom).astype(x.dtype, copy=False)


def softmax_rows_grad(p, dy):
    """Backward of row softmax given probabilities p."""
    inner = np.sum(dy * p, axis=1, dtype=np.float64).astype(p.dtype)
    return (p * (dy - inner[:, None])).astype(p.dtype, copy=False)


def stamp_gaussian_max(canvas, xs, ys, sigma):
    """Stamp unit-peak Gaussians at float coords (xs[i], ys[i]) into canvas.

    Pixels take the max of their current value and exp(-d^2 / (2 sigma^2)),
    d being the distance to the stamp centre. Stamps are truncated at a
    3-sigma radius; out-of-bounds pixels are skipped. Mutates canvas.
    """
    h, w = canvas.shape
    r = int(np.ceil(3.0 * sigma))
    offs = np.arange(-r, r + 1)
    cx = np.floor(xs).astype(np.int64)
    cy = np.floor(ys).astype(np.int64)
    ix = cx[:, None] + offs[None, :]          # [n, 2r+1]
    iy = cy[:, None] + offs[None, :]
    dx2 = np.square(ix - xs[:, None])
    dy2 = np.square(iy - ys[:, None])
    d2 = dx2[:, None, :] + dy2[:, :, None]    # [n, 2r+1 (y), 2r+1 (x)]
    vals = np.exp(-d2 / (2.0 * sigma * sigma)).astype(canvas.dtype)
    gx = np.broadcast_to(ix[:, None, :], d2.shape)
    gy = np.broadcast_to(iy[:, :, None], d2.shape)
    ok = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
    np.maximum.at(canvas, (gy[ok], gx[ok]), vals[ok])
