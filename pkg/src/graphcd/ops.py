"""Differentiable array kernels: convolution, normalization, pooling, resizing.

Every forward function returns ``(out, cache)``; the matching
``*_backward(grad_out, cache)`` propagates gradients to inputs and
parameters. Arrays are float64 with layout [B, C, H, W] unless noted.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_last(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, numerically stable."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_last_backward(grad: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Gradient through softmax_last given its output ``out``."""
    dot = (grad * out).sum(axis=-1, keepdims=True)
    return out * (grad - dot)


def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0)


def relu_backward(grad, mask):
    return grad * mask


def _im2col(x_pad, kh, kw, stride):
    windows = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    b, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, b * oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def conv2d_forward(x, w, b=None, stride: int = 1, pad: int = 0):
    """Cross-correlation of [B,Cin,H,W] with kernels [Cout,Cin,KH,KW]."""
    bsz, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d: input has {cin} channels but kernel expects {cin_w}"
        )
    if kh == 1 and kw == 1:
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        oh, ow = xs.shape[2], xs.shape[3]
        cols = xs.transpose(1, 0, 2, 3).reshape(cin, -1)
    else:
        if pad:
            x_pad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        else:
            x_pad = x
        cols, oh, ow = _im2col(x_pad, kh, kw, stride)
    out = w.reshape(cout, -1) @ cols
    if b is not None:
        out += b[:, None]
    out = out.reshape(cout, bsz, oh, ow).transpose(1, 0, 2, 3)
    cache = (x.shape, cols, w, b is not None, stride, pad)
    return out, cache


def _dilate(grad, stride, target_h, target_w):
    """Insert stride-1 zeros between entries and zero-pad to the target size."""
    bsz, c, oh, ow = grad.shape
    out = np.zeros((bsz, c, target_h, target_w), dtype=grad.dtype)
    out[:, :, :(oh - 1) * stride + 1:stride, :(ow - 1) * stride + 1:stride] = grad
    return out


def conv2d_backward(grad, cache, need_dx: bool = True):
    """Input gradient as a transposed convolution of the output gradient."""
    x_shape, cols, w, has_bias, stride, pad = cache
    bsz, cin, h, wid = x_shape
    cout, _, kh, kw = w.shape
    gmat = grad.transpose(1, 0, 2, 3).reshape(cout, -1)
    dw = (gmat @ cols.T).reshape(w.shape)
    db = grad.sum(axis=(0, 2, 3)) if has_bias else None
    if not need_dx:
        return None, dw, db
    if kh == 1 and kw == 1:
        dxs = np.einsum("fc,bfhw->bchw", w.reshape(cout, cin), grad)
        if stride == 1:
            return dxs, dw, db
        dx = np.zeros((bsz, cin, h, wid), dtype=DTYPE)
        dx[:, :, ::stride, ::stride] = dxs
        return dx, dw, db
    grad_dil = _dilate(grad, stride, h + 2 * pad - kh + 1, wid + 2 * pad - kw + 1)
    w_flip = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    dx_pad, _ = conv2d_forward(grad_dil, w_flip, stride=1, pad=kh - 1)
    dx = dx_pad[:, :, pad:pad + h, pad:pad + wid] if pad else dx_pad
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, run_mean, run_var, train: bool,
                      momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization over (batch, height, width).

    In training mode the batch statistics are used and the running
    averages are updated in place; in evaluation mode the running
    averages are used as constants.
    """
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        run_mean *= 1.0 - momentum
        run_mean += momentum * mean
        run_var *= 1.0 - momentum
        run_var += momentum * var
    else:
        mean, var = run_mean, run_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    out = gamma[:, None, None] * xhat + beta[:, None, None]
    cache = (xhat, gamma, inv_std, train)
    return out, cache


def batchnorm_backward(grad, cache):
    xhat, gamma, inv_std, train = cache
    dgamma = (grad * xhat).sum(axis=(0, 2, 3))
    dbeta = grad.sum(axis=(0, 2, 3))
    dxhat = grad * gamma[:, None, None]
    if not train:
        dx = dxhat * inv_std[:, None, None]
        return dx, dgamma, dbeta
    n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (inv_std[:, None, None] / n) * (
        n * dxhat
        - sum_dxhat[:, None, None]
        - xhat * sum_dxhat_xhat[:, None, None]
    )
    return dx, dgamma, dbeta


def maxpool2d_forward(x, kernel: int = 3, stride: int = 2, pad: int = 1):
    bsz, c, h, w = x.shape
    x_pad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                   constant_values=-np.inf)
    windows = sliding_window_view(x_pad, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    flat = windows.reshape(bsz, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (x.shape, arg, kernel, stride, pad, oh, ow)
    return out, cache


def maxpool2d_backward(grad, cache):
    x_shape, arg, kernel, stride, pad, oh, ow = cache
    bsz, c, h, w = x_shape
    dx_pad = np.zeros((bsz, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    ki, kj = np.divmod(arg, kernel)
    bi = np.arange(bsz)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    hi = np.arange(oh)[None, None, :, None] * stride + ki
    wi = np.arange(ow)[None, None, None, :] * stride + kj
    np.add.at(dx_pad, (bi, ci, hi, wi), grad)
    return dx_pad[:, :, pad:pad + h, pad:pad + w] if pad else dx_pad


def upsample_matrix(in_len: int, factor: int) -> np.ndarray:
    """1-D bilinear interpolation matrix [in_len*factor, in_len].

    Output sample o reads the input at (o + 0.5)/factor - 0.5 with
    half-pixel centers; source coordinates are clamped at the borders.
    """
    out_len = in_len * factor
    src = (np.arange(out_len, dtype=DTYPE) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    t = src - i0
    m = np.zeros((out_len, in_len), dtype=DTYPE)
    np.add.at(m, (np.arange(out_len), i0), 1.0 - t)
    np.add.at(m, (np.arange(out_len), i1), t)
    return m


def bilinear_upsample_forward(x, factor: int):
    """Bilinear upsampling of [B,C,h,w] by an integer factor."""
    bsz, c, h, w = x.shape
    mh = upsample_matrix(h, factor)
    mw = upsample_matrix(w, factor)
    out = mh @ x @ mw.T
    return out, (mh, mw)


def bilinear_upsample_backward(grad, cache):
    mh, mw = cache
    return mh.T @ grad @ mw
