"""Pure numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable.  Layouts
match the compiled kernels exactly:

  activations  (batch, length, channels), C-contiguous float64
  conv weights (filters, kernel, in_channels)
  conv bias    (filters,)

Convolution is "valid" (no padding, stride 1).  Pooling is max over
non-overlapping windows of 2; a trailing odd element is dropped.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(B, L, C) -> (B * L_out, kernel * C) window matrix, row = x[b, i:i+K, :] flattened."""
    b, length, c_in = x.shape
    l_out = length - kernel + 1
    # sliding_window_view gives (B, L_out, C, K); reorder to (j, c) per row
    windows = sliding_window_view(x, kernel, axis=1)
    return np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(b * l_out, kernel * c_in)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[n, i, f] = b[f] + sum_{j,c} x[n, i+j, c] * w[f, j, c]."""
    batch, length, c_in = x.shape
    f, kernel, _ = w.shape
    l_out = length - kernel + 1
    cols = _im2col(x, kernel)
    out = cols @ w.reshape(f, kernel * c_in).T
    out += b
    return out.reshape(batch, l_out, f)


def conv1d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of the valid convolution: returns (dx, dw, db)."""
    batch, length, c_in = x.shape
    f, kernel, _ = w.shape
    l_out = length - kernel + 1
    dy_flat = dy.reshape(batch * l_out, f)

    cols = _im2col(x, kernel)
    dw = (dy_flat.T @ cols).reshape(f, kernel, c_in)
    db = dy_flat.sum(axis=0)

    dcols = (dy_flat @ w.reshape(f, kernel * c_in)).reshape(batch, l_out, kernel, c_in)
    dx = np.zeros_like(x)
    for j in range(kernel):
        dx[:, j:j + l_out, :] += dcols[:, :, j, :]
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    """Max over pairs along length; returns (out, idx) with idx in {0, 1} (first index wins ties)."""
    batch, length, c = x.shape
    l_out = length // 2
    pairs = np.ascontiguousarray(x[:, :2 * l_out, :]).reshape(batch, l_out, 2, c)
    idx = pairs.argmax(axis=2).astype(np.int8)
    out = pairs.max(axis=2)
    return out, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    """Route gradients to each window's argmax position; dropped odd tail gets zero."""
    batch, l_out, c = dy.shape
    pairs = np.zeros((batch, l_out, 2, c), dtype=dy.dtype)
    np.put_along_axis(pairs, idx[:, :, None, :].astype(np.intp), dy[:, :, None, :], axis=2)
    dx = pairs.reshape(batch, 2 * l_out, c)
    if length > 2 * l_out:
        pad = np.zeros((batch, length - 2 * l_out, c), dtype=dy.dtype)
        dx = np.concatenate([dx, pad], axis=1)
    return np.ascontiguousarray(dx)
