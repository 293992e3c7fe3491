# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy reference kernels in ``pykernels``.

Same signatures, same math; row reductions accumulate in double. These fuse
the temporary-heavy elementwise/rowwise passes that dominate small-model
training steps; matrix products stay on BLAS in both backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp
from libc.math cimport pow as c_pow
from libc.math cimport sqrt as c_sqrt
from libc.math cimport tanh as c_tanh

cnp.import_array()

ctypedef fused floating:
    float
    double

cdef double _SQRT_2_OVER_PI = 0.7978845608028654
cdef double _GELU_C = 0.044715


def _gelu_fwd(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, inner
    for i in range(n):
        v = x[i]
        inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
        out[i] = <floating>(0.5 * v * (1.0 + c_tanh(inner)))


def gelu_forward(x):
    out = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), out.reshape(-1))
    return out


def _gelu_bwd(floating[::1] x, floating[::1] gy, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, v2, inner, t, d_inner, local
    for i in range(n):
        v = x[i]
        v2 = v * v
        inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v2)
        t = c_tanh(inner)
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v2)
        local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner
        out[i] = <floating>(gy[i] * local)


def gelu_backward(x, gy):
    out = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), gy.reshape(-1), out.reshape(-1))
    return out


def _ln_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias,
            double eps, floating[:, ::1] y, floating[::1] mean, floating[::1] rstd):
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double acc, mu, var, rs, xh
    for r in range(rows):
        acc = 0.0
        for j in range(d):
            acc += x[r, j]
        mu = acc / d
        acc = 0.0
        for j in range(d):
            acc += (x[r, j] - mu) * (x[r, j] - mu)
        var = acc / d
        rs = 1.0 / c_sqrt(var + eps)
        mean[r] = <floating>mu
        rstd[r] = <floating>rs
        for j in range(d):
            xh = (x[r, j] - mu) * rs
            y[r, j] = <floating>(xh * gain[j] + bias[j])


def layernorm_forward(x, gain, bias, eps):
    y = np.empty_like(x)
    mean = np.empty(x.shape[0], dtype=x.dtype)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _ln_fwd(x, gain, bias, eps, y, mean, rstd)
    return y, mean, rstd


def _ln_bwd(floating[:, ::1] x, floating[::1] gain, floating[::1] mean,
            floating[::1] rstd, floating[:, ::1] gy, floating[:, ::1] gx,
            double[::1] dgain, double[::1] dbias):
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double mu, rs, xh, gxh, row_sum, row_dot
    for r in range(rows):
        mu = mean[r]
        rs = rstd[r]
        row_sum = 0.0
        row_dot = 0.0
        for j in range(d):
            xh = (x[r, j] - mu) * rs
            gxh = gy[r, j] * gain[j]
            row_sum += gxh
            row_dot += gxh * xh
            dgain[j] += gy[r, j] * xh
            dbias[j] += gy[r, j]
        for j in range(d):
            xh = (x[r, j] - mu) * rs
            gxh = gy[r, j] * gain[j]
            gx[r, j] = <floating>(rs * (gxh - row_sum / d - xh * row_dot / d))


def layernorm_backward(x, gain, mean, rstd, gy):
    gx = np.empty_like(x)
    dgain = np.zeros(x.shape[1], dtype=np.float64)
    dbias = np.zeros(x.shape[1], dtype=np.float64)
    _ln_bwd(x, gain, mean, rstd, gy, gx, dgain, dbias)
    return gx, dgain.astype(x.dtype), dbias.astype(x.dtype)


def _softmax_fwd(floating[:, ::1] x, floating[:, ::1] y):
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double mx, acc, e
    for r in range(rows):
        mx = x[r, 0]
        for j in range(1, d):
            if x[r, j] > mx:
                mx = x[r, j]
        acc = 0.0
        for j in range(d):
            e = c_exp(x[r, j] - mx)
            y[r, j] = <floating>e
            acc += e
        for j in range(d):
            y[r, j] = <floating>(y[r, j] / acc)


def softmax_forward(x):
    y = np.empty_like(x)
    _softmax_fwd(x, y)
    return y


def _softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy, floating[:, ::1] gx):
    cdef Py_ssize_t r, j, rows = y.shape[0], d = y.shape[1]
    cdef double dot
    for r in range(rows):
        dot = 0.0
        for j in range(d):
            dot += y[r, j] * gy[r, j]
        for j in range(d):
            gx[r, j] = <floating>(y[r, j] * (gy[r, j] - dot))


def softmax_backward(y, gy):
    gx = np.empty_like(y)
    _softmax_bwd(y, gy, gx)
    return gx


def _adamw(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
           double lr, double beta1, double beta2, double eps, double wd,
           double bc1, double bc2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m[i] = <floating>mi
        v[i] = <floating>vi
        p[i] = <floating>(p[i] - lr * ((mi / bc1) / (c_sqrt(vi / bc2) + eps) + wd * p[i]))


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, t):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    _adamw(p.reshape(-1), np.ascontiguousarray(g).reshape(-1), m.reshape(-1),
           v.reshape(-1), lr, beta1, beta2, eps, wd, bc1, bc2)


def _bilinear(floating[:, ::1] img, floating[:, ::1] out,
              double y0, double x0, double y1, double x1):
    cdef Py_ssize_t oi, oj, out_h = out.shape[0], out_w = out.shape[1]
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t iy, ix, iy1, ix1
    cdef double sy, sx, fy, fx, top, bot
    for oi in range(out_h):
        sy = (oi + 0.5) * ((y1 - y0) / out_h) + y0 - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > h - 1.0:
            sy = h - 1.0
        iy = <Py_ssize_t>sy
        if iy > h - 2:
            iy = h - 2 if h > 1 else 0
        fy = sy - iy
        iy1 = iy + 1 if iy + 1 < h else h - 1
        for oj in range(out_w):
            sx = (oj + 0.5) * ((x1 - x0) / out_w) + x0 - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > w - 1.0:
                sx = w - 1.0
            ix = <Py_ssize_t>sx
            if ix > w - 2:
                ix = w - 2 if w > 1 else 0
            fx = sx - ix
            ix1 = ix + 1 if ix + 1 < w else w - 1
            top = img[iy, ix] * (1.0 - fx) + img[iy, ix1] * fx
            bot = img[iy1, ix] * (1.0 - fx) + img[iy1, ix1] * fx
            out[oi, oj] = <floating>(top * (1.0 - fy) + bot * fy)


def bilinear_resize(img, out_h, out_w, y0, x0, y1, x1):
    if img.dtype not in (np.float32, np.float64):
        img = img.astype(np.float32)
    img = np.ascontiguousarray(img)
    out = np.empty((out_h, out_w), dtype=img.dtype)
    _bilinear(img, out, y0, x0, y1, x1)
    return out
