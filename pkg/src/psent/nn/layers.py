"""Forward/backward primitives on NCHW arrays.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the cache and the upstream gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw, stride, pad, fill=0.0):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride], x.shape


def conv2d_forward(x, w, stride=1, pad=0):
    """Cross-correlation without bias; ``w`` has shape (F, C, kh, kw)."""
    f, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"conv expects {c} input channels, got {x.shape[1]}")
    if kh == kw == 1 and pad == 0:
        xs = x[:, :, ::stride, ::stride]
        out = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(out), (x.shape, xs, w, stride, pad)
    win, padded_shape = _windows(x, kh, kw, stride, pad)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), (padded_shape, win, w, stride, pad)


def conv2d_backward(dout, cache):
    shape, win, w, stride, pad = cache
    f, c, kh, kw = w.shape
    if kh == kw == 1 and pad == 0:
        dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, ::stride, ::stride] = np.tensordot(w[:, :, 0, 0], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
        return dx, dw
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # F, C, kh, kw
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # N, C, kh, kw, Ho, Wo
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros(shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw


def batchnorm_forward(x, gamma, beta, mean, var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalisation.

    In training mode batch statistics are used and the updated running
    ``(mean, var)`` are returned alongside; at inference the running values
    are used and returned unchanged.
    """
    if training:
        mu = x.mean(axis=(0, 2, 3))
        sigma2 = x.var(axis=(0, 2, 3))
        n = x.size / x.shape[1]
        unbiased = sigma2 * n / max(n - 1, 1)
        new_stats = ((1 - momentum) * mean + momentum * mu,
                     (1 - momentum) * var + momentum * unbiased)
    else:
        mu, sigma2 = mean, var
        new_stats = (mean, var)
    inv_std = 1.0 / np.sqrt(sigma2 + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training), new_stats


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dout, axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not training:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = dout.size / dout.shape[1]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None]
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, k=3, stride=2, pad=1):
    win, padded_shape = _windows(x, k, k, stride, pad, fill=-np.inf)
    flat = win.reshape(win.shape[:4] + (k * k,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (padded_shape, arg, k, stride, pad)


def maxpool_backward(dout, cache):
    shape, arg, k, stride, pad = cache
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros(shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dout * (arg == i * k + j)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def gap_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout, shape):
    n, c, h, w = shape
    return np.broadcast_to(dout[:, :, None, None] / (h * w), shape).copy()


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def se_forward(x, w1, b1, w2, b2):
    """Squeeze-and-excitation gating.

    ``w1`` is C x C/r (squeeze), ``w2`` is C/r x C (excite). Returns the
    rescaled input and the per-channel gates in the cache.
    """
    if x.shape[1] != w1.shape[0]:
        raise ValueError(f"SE block expects {w1.shape[0]} channels, got {x.shape[1]}")
    z = x.mean(axis=(2, 3))
    h_pre = z @ w1 + b1
    h = np.maximum(h_pre, 0)
    s = sigmoid(h @ w2 + b2)
    return x * s[:, :, None, None], (x, z, h_pre, h, s, w1, w2)


def se_backward(dout, cache):
    x, z, h_pre, h, s, w1, w2 = cache
    ds = np.sum(dout * x, axis=(2, 3))
    da2 = ds * s * (1 - s)
    dw2 = h.T @ da2
    db2 = da2.sum(axis=0)
    dh = (da2 @ w2.T) * (h_pre > 0)
    dw1 = z.T @ dh
    db1 = dh.sum(axis=0)
    dz = dh @ w1.T
    hw = x.shape[2] * x.shape[3]
    dx = dout * s[:, :, None, None] + dz[:, :, None, None] / hw
    return dx, dw1, db1, dw2, db2


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))
