"""Whole-model gradient verification under the masked multi-task loss.

Runs the central finite-difference oracle over every parameter of a small
three-head model, so convolution, pooling, flatten, dense, ReLU, the softmax
cross-entropy heads, and the mask/lambda plumbing are all checked against an
oracle that knows nothing about backpropagation.
"""
from __future__ import annotations

import numpy as np

from .labels import TaskLabels
from .model import MultiHeadNet, masked_mtl_loss, tiny_architecture
from .nn.gradcheck import GradCheckReport, compare_grads, finite_difference


def check_batch(rng: np.random.Generator, k: int, n_classes: int, batch: int):
    """Inputs in feature range and labels with a mixed traffic mask."""
    x = rng.uniform(-1.0, 1.0, size=(batch, k, 2))
    labels = []
    for i in range(batch):
        labels.append(TaskLabels(
            y_bw=int(rng.integers(1, n_classes + 1)),
            y_dur=int(rng.integers(1, n_classes + 1)),
            y_traffic=int(rng.integers(1, n_classes + 1)) if i % 2 == 0 else None,
        ))
    return x, labels


def check_model_gradients(k: int = 12, tol: float = 1e-4, seed: int = 0,
                          batch: int = 8, lam: float = 1.7, step: float = 1e-5,
                          atol: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients with central differences for every
    parameter tensor; atol is the floor that keeps exactly-zero gradients
    (masked-out paths) from tripping the relative criterion."""
    model = MultiHeadNet(tiny_architecture(k=k), seed=seed)
    rng = np.random.default_rng(seed + 1)
    x, labels = check_batch(rng, k, model.arch.heads[0][1], batch)

    _, grads = masked_mtl_loss(model, x, labels, lam=lam)
    analytic = {name: arr.copy() for name, arr in grads.items()}
    params = model.params()

    def loss_at() -> float:
        loss, _ = masked_mtl_loss(model, x, labels, lam=lam)
        return loss.total

    report = GradCheckReport()
    for name in sorted(params):
        numeric = finite_difference(loss_at, params[name], h=step)
        report.checks.append(
            compare_grads(name, analytic[name], numeric, rtol=tol, atol=atol))
    return report
