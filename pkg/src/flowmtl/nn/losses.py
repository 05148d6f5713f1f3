"""Softmax cross-entropy with max-subtraction stabilization."""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, targets: np.ndarray):
    """Per-sample cross entropy.

    logits: (B, n_classes); targets: (B,) 0-indexed class ids.
    Returns (losses (B,), probs (B, n_classes)).
    """
    logits = np.atleast_2d(logits)
    targets = np.atleast_1d(targets)
    n = logits.shape[1]
    if n < 2:
        raise ValueError(f"need at least 2 classes, got {n}")
    if targets.min() < 0 or targets.max() >= n:
        raise ValueError(f"target out of range for {n} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(len(targets)), targets]
    probs = np.exp(shifted - log_z[:, None])
    return losses, probs


def xent_grad(probs: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d(sum_i w_i * xent_i)/dlogits = w_i * (p_i - onehot_i)."""
    d = probs * weights[:, None]
    d[np.arange(len(targets)), targets] -= weights
    return d
