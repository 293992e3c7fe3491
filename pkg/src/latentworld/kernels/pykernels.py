"""Reference numpy implementations of the hot numeric kernels.

Every function here has a signature-identical compiled twin in
``_ckernels.pyx``; this module is the fallback selected at import when the
extension is unavailable, and the ground truth the compiled kernels are
tested against. All 2D kernels operate on contiguous ``(rows, dim)`` views;
callers reshape. float32 and float64 are both supported.
"""

import numpy as np

_SQRT_2_OVER_PI = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def gelu_forward(x: np.ndarray) -> np.ndarray:
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(x.dtype, copy=False)


def gelu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # in-place passes; buffers are reused to stay bandwidth-friendly
    x2 = x * x
    inner = x2 * _GELU_C
    inner += 1.0
    inner *= x
    inner *= _SQRT_2_OVER_PI
    t = np.tanh(inner)
    d_inner = x2
    d_inner *= 3.0 * _GELU_C
    d_inner += 1.0
    d_inner *= _SQRT_2_OVER_PI
    s = t * t
    np.subtract(1.0, s, out=s)
    s *= d_inner
    s *= x
    s *= 0.5
    t += 1.0
    t *= 0.5
    t += s
    t *= gy
    return t.astype(x.dtype, copy=False)


def layernorm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gain[None, :] + bias[None, :]
    return y.astype(x.dtype, copy=False), mean.astype(x.dtype), rstd.astype(x.dtype)


def layernorm_backward(x, gain, mean, rstd, gy):
    d = x.shape[1]
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = (gy * xhat).sum(axis=0)
    dbias = gy.sum(axis=0)
    gxhat = gy * gain[None, :]
    # d/dx of (x - mu) * rstd with mu, rstd functions of the row
    row_sum = gxhat.sum(axis=1, keepdims=True)
    row_dot = (gxhat * xhat).sum(axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - row_sum / d - xhat * row_dot / d)
    return gx.astype(x.dtype, copy=False), dgain.astype(x.dtype), dbias.astype(x.dtype)


def softmax_forward(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted.astype(x.dtype, copy=False)


def softmax_forward_inplace(x: np.ndarray) -> np.ndarray:
    """Variant for buffers the caller owns; clobbers ``x``."""
    x -= x.max(axis=1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x


def softmax_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    prod = y * gy
    dot = prod.sum(axis=1, keepdims=True)
    out = gy - dot
    out *= y
    return out.astype(y.dtype, copy=False)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, t):
    """One decoupled-weight-decay optimizer step, updating p/m/v in place."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    step = (m / bc1) / (np.sqrt(v / bc2) + eps)
    p -= lr * (step + wd * p)


def bilinear_resize(img, out_h, out_w, y0, x0, y1, x1):
    """Sample the continuous crop box [y0,y1)x[x0,x1) onto an out_h x out_w grid.

    Source pixel i covers [i, i+1); sampling uses pixel centers with edge
    clamping, so a full-frame crop at identical size is the identity.
    """
    h, w = img.shape
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * ((y1 - y0) / out_h) + y0 - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * ((x1 - x0) / out_w) + x0 - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    iy = np.minimum(sy.astype(np.int64), h - 2) if h > 1 else np.zeros(out_h, np.int64)
    ix = np.minimum(sx.astype(np.int64), w - 2) if w > 1 else np.zeros(out_w, np.int64)
    fy = sy - iy
    fx = sx - ix
    iy1 = np.minimum(iy + 1, h - 1)
    ix1 = np.minimum(ix + 1, w - 1)
    imgf = img.astype(np.float64, copy=False)
    top = imgf[iy[:, None], ix[None, :]] * (1 - fx)[None, :] + imgf[iy[:, None], ix1[None, :]] * fx[None, :]
    bot = imgf[iy1[:, None], ix[None, :]] * (1 - fx)[None, :] + imgf[iy1[:, None], ix1[None, :]] * fx[None, :]
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out.astype(img.dtype if img.dtype in (np.float32, np.float64) else np.float32, copy=False)
