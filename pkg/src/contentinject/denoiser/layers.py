"""Forward/backward pairs for the U-Net op set.

Internal activations use a (C, B, H, W) layout so that 3x3 convolutions
reduce to one GEMM over contiguous im2col slices.  Every ``*_forward``
returns ``(out, cache)``; the matching ``*_backward`` takes
``(dout, cache)`` and returns the input gradient followed by parameter
gradients.
"""

from __future__ import annotations

import math

import numpy as np


def _im2col(x: np.ndarray) -> np.ndarray:
    C, B, H, W = x.shape
    xp = np.zeros((C, B, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((C, 9, B, H, W), dtype=x.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        cols[:, k] = xp[:, :, i : i + H, j : j + W]
    return cols.reshape(C * 9, B * H * W)


def _col2im(dcols: np.ndarray, shape) -> np.ndarray:
    C, B, H, W = shape
    dcols = dcols.reshape(C, 9, B, H, W)
    dxp = np.zeros((C, B, H + 2, W + 2), dtype=dcols.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, :, i : i + H, j : j + W] += dcols[:, k]
    return dxp[:, :, 1:-1, 1:-1]


def conv_forward(x, w, b):
    """Same-padded 3x3 convolution; ``w`` is (O, C, 3, 3)."""
    C, B, H, W = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols
    out += b[:, None]
    return out.reshape(w.shape[0], B, H, W), (cols, w, x.shape)


def conv_backward(dout, cache):
    cols, w, shape = cache
    O = w.shape[0]
    d2 = dout.reshape(O, -1)
    db = d2.sum(axis=1)
    dw = (d2 @ cols.T).reshape(w.shape)
    dx = _col2im(w.reshape(O, -1).T @ d2, shape)
    return dx, dw, db


def pointwise_forward(x, w, b):
    """1x1 convolution (channel mixing); ``w`` is (O, C)."""
    C, B, H, W = x.shape
    out = (w @ x.reshape(C, -1) + b[:, None]).reshape(w.shape[0], B, H, W)
    return out, (x, w)


def pointwise_backward(dout, cache):
    x, w = cache
    O = w.shape[0]
    d2 = dout.reshape(O, -1)
    dw = d2 @ x.reshape(x.shape[0], -1).T
    dx = (w.T @ d2).reshape(x.shape)
    return dx, dw, d2.sum(axis=1)


def groupnorm_forward(x, gain, bias, groups: int = 4, eps: float = 1e-5):
    C, B, H, W = x.shape
    xg = x.reshape(groups, C // groups, B, H * W)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(C, B, H, W)
    out = xhat * gain[:, None, None, None] + bias[:, None, None, None]
    return out, (xhat, inv, gain, groups)


def groupnorm_backward(dout, cache):
    xhat, inv, gain, groups = cache
    C, B, H, W = xhat.shape
    dgain = (dout * xhat).sum(axis=(1, 2, 3))
    dbias = dout.sum(axis=(1, 2, 3))
    dxhat = (dout * gain[:, None, None, None]).reshape(groups, C // groups, B, H * W)
    xh = xhat.reshape(groups, C // groups, B, H * W)
    dx = inv * (
        dxhat
        - dxhat.mean(axis=(1, 3), keepdims=True)
        - xh * (dxhat * xh).mean(axis=(1, 3), keepdims=True)
    )
    return dx.reshape(C, B, H, W), dgain, dbias


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_forward(x):
    s = _sigmoid(x)
    return x * s, (x, s)


def silu_backward(dout, cache):
    x, s = cache
    return dout * s * (1.0 + x * (1.0 - s))


def linear_forward(x, w, b):
    """``x`` is (B, in); ``w`` is (out, in)."""
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def avgpool2_forward(x):
    C, B, H, W = x.shape
    return x.reshape(C, B, H // 2, 2, W // 2, 2).mean(axis=(3, 5)), x.shape


def avgpool2_backward(dout, shape):
    d = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25
    return d.reshape(shape)


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dout):
    C, B, H, W = dout.shape
    return dout.reshape(C, B, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


def timestep_features(t: np.ndarray, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)
