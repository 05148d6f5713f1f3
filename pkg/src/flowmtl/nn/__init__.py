"""Minimal deterministic neural-network engine.

1D valid convolution, pair max-pooling, dense layers, ReLU, softmax
cross-entropy, and Adam, with hand-derived gradients.  The hot kernels run
on a compiled extension when built and a numpy fallback otherwise; see
flowmtl.nn.backend.
"""

from __future__ import annotations

import numpy as np

from flowmtl.nn import backend
from flowmtl.nn.adam import Adam, AdamConfig
from flowmtl.nn.layers import Conv1D, Dense, Flatten, MaxPool1D, ReLU, Sequential
from flowmtl.nn.losses import softmax, softmax_xent

__all__ = [
    "Adam", "AdamConfig", "Conv1D", "Dense", "Flatten", "MaxPool1D", "ReLU",
    "Sequential", "backend", "conv1d", "maxpool1d", "softmax", "softmax_xent",
]


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Functional valid convolution; accepts (L, C_in) or (B, L, C_in)."""
    single = x.ndim == 2
    xb = x[None] if single else x
    y = backend.get_backend().conv1d_forward(np.ascontiguousarray(xb, dtype=np.float64), w, b)
    return y[0] if single else y


def maxpool1d(x: np.ndarray) -> np.ndarray:
    """Functional pair max-pool; accepts (L, C) or (B, L, C)."""
    single = x.ndim == 2
    xb = x[None] if single else x
    y, _ = backend.get_backend().maxpool2_forward(np.ascontiguousarray(xb, dtype=np.float64))
    return y[0] if single else y
