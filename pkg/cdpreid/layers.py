"""
Forward and backward passes of the layers used by the embedding network.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes the upstream derivative and that cache. Arrays are NCHW for
convolutional activations and N x D for vectors.
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError


def conv_output_size(size: int, kernel: int = 3, stride: int = 2, pad: int = 1) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 2, pad: int = 1):
    """
    Convolution of x (N, C, H, W) with filters w (F, C, KH, KW) and biases b (F,).

    Returns out of shape (N, F, H', W') with H' = (H + 2 pad - KH) // stride + 1.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise InvalidInputError(f"conv input {x.shape} does not match filters {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # windows: (N, C, H', W', KH, KW)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[None, :, None, None]
    cache = (x.shape, windows, w, stride, pad)
    return np.ascontiguousarray(out), cache


def conv_backward(dout: np.ndarray, cache, need_dx: bool = True):
    """
    Returns (dx, dw, db); dx is None when ``need_dx`` is False.
    """
    x_shape, windows, w, stride, pad = cache
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    if not need_dx:
        return None, dw, db

    n, c, h, width = x_shape
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, width + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            # (N, H', W', C) contribution of kernel tap (i, j)
            contrib = np.tensordot(dout, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + width]
    return np.ascontiguousarray(dx), dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_backward(dout: np.ndarray, cache):
    return dout * (cache > 0.0)


def gap_forward(x: np.ndarray):
    """
    Global average pooling of (N, C, H, W) into (N, C).
    """
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout: np.ndarray, cache):
    n, c, h, w = cache
    return np.broadcast_to(dout[:, :, None, None] / (h * w), cache).copy()


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """
    x (N, D_in) times w (D_out, D_in) transposed, plus b (D_out,).
    """
    if x.shape[1] != w.shape[1]:
        raise InvalidInputError(f"affine input {x.shape} does not match weights {w.shape}")
    return x @ w.T + b, (x, w)


def affine_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, rate: float, rng: Optional[np.random.Generator]):
    """
    Inverted dropout: each unit is zeroed with probability ``rate`` and
    survivors are scaled by 1 / (1 - rate). Without a generator (eval mode)
    the input passes through and the mask is None.
    """
    if rng is None or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask: Optional[np.ndarray]):
    if mask is None:
        return dout
    return dout * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)
