# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise kernels (GELU, layer norm, row softmax, line stamping).

All transcendentals and accumulations run in double precision internally,
matching the numpy fallback's float64-reduction convention, then cast to the
buffer dtype. Public entry points are the underscore-suffixed functions; the
shape-handling adapters live in cython_adapter.py.
"""

from libc.math cimport ceil as c_ceil
from libc.math cimport erf, exp, floor, sqrt

cdef double PI = 3.141592653589793
cdef double INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * PI)

NAME = "cython"

ctypedef fused real:
    float
    double


def gelu_(real[::1] x, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    for i in range(n):
        v = <double> x[i]
        out[i] = <real> (0.5 * v * (1.0 + erf(v * INV_SQRT2)))


def gelu_grad_(real[::1] x, real[::1] dy, real[::1] dx):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, d
    for i in range(n):
        v = <double> x[i]
        d = 0.5 * (1.0 + erf(v * INV_SQRT2)) + v * exp(-0.5 * v * v) * INV_SQRT_2PI
        dx[i] = <real> (<double> dy[i] * d)


def layernorm_(real[:, ::1] x, real[::1] w, real[::1] b, double eps,
               real[:, ::1] y, real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t r, j, nrows = x.shape[0], d = x.shape[1]
    cdef double acc, mu, var, rs, xh
    for r in range(nrows):
        acc = 0.0
        for j in range(d):
            acc += <double> x[r, j]
        mu = acc / d
        acc = 0.0
        for j in range(d):
            acc += (<double> x[r, j] - mu) * (<double> x[r, j] - mu)
        var = acc / d
        rs = 1.0 / sqrt(var + eps)
        mean[r] = <real> mu
        rstd[r] = <real> rs
        for j in range(d):
            xh = (<double> x[r, j] - <double> mean[r]) * <double> rstd[r]
            y[r, j] = <real> (xh * <double> w[j] + <double> b[j])


def layernorm_grad_(real[:, ::1] x, real[::1] w, real[::1] mean, real[::1] rstd,
                    real[:, ::1] dy, real[:, ::1] dx,
                    double[::1] dw, double[::1] db):
    cdef Py_ssize_t r, j, nrows = x.shape[0], d = x.shape[1]
    cdef double xh, dxh, m1, m2, mu, rs
    for r in range(nrows):
        mu = <double> mean[r]
        rs = <double> rstd[r]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (<double> x[r, j] - mu) * rs
            dxh = <double> dy[r, j] * <double> w[j]
            m1 += dxh
            m2 += dxh * xh
            dw[j] += <double> dy[r, j] * xh
            db[j] += <double> dy[r, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (<double> x[r, j] - mu) * rs
            dxh = <double> dy[r, j] * <double> w[j]
            dx[r, j] = <real> (rs * (dxh - m1 - xh * m2))


def softmax_rows_(real[:, ::1] x, real[:, ::1] p):
    cdef Py_ssize_t r, j, nrows = x.shape[0], d = x.shape[1]
    cdef double mx, acc, e
    for r in range(nrows):
        mx = <double> x[r, 0]
        for j in range(1, d):
            if <double> x[r, j] > mx:
                mx = <double> x[r, j]
        acc = 0.0
        for j in range(d):
            e = exp(<double> x[r, j] - mx)
            p[r, j] = <real> e
            acc += e
        for j in range(d):
            p[r, j] = <real> (<double> p[r, j] / acc)


def softmax_rows_grad_(real[:, ::1] p, real[:, ::1] dy, real[:, ::1] dx):
    cdef Py_ssize_t r, j, nrows = p.shape[0], d = p.shape[1]
    cdef double inner
    for r in range(nrows):
        inner = 0.0
        for j in range(d):
            inner += <double> dy[r, j] * <double> p[r, j]
        for j in range(d):
            dx[r, j] = <real> (<double> p[r, j] * (<double> dy[r, j] - inner))


def stamp_gaussian_max_(real[:, ::1] canvas, double[::1] xs, double[::1] ys,
                        double sigma):
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef Py_ssize_t h = canvas.shape[0], w = canvas.shape[1]
    cdef Py_ssize_t r = <Py_ssize_t> c_ceil(3.0 * sigma)
    cdef Py_ssize_t cx, cy, ix, iy
    cdef double x, y, d2, v, inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for i in range(n):
        x = xs[i]
        y = ys[i]
        cx = <Py_ssize_t> floor(x)
        cy = <Py_ssize_t> floor(y)
        for iy in range(cy - r, cy + r + 1):
            if iy < 0 or iy >= h:
                continue
            for ix in range(cx - r, cx + r + 1):
                if ix < 0 or ix >= w:
                    continue
                d2 = (ix - x) * (ix - x) + (iy - y) * (iy - y)
                v = exp(-d2 * inv2s2)
                if v > <double> canvas[iy, ix]:
                    canvas[iy, ix] = <real> v
