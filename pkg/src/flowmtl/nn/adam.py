"""Adam with bias-corrected moments, operating on named parameter dicts in place."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowmtl.errors import NumericalError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: dict[str, np.ndarray], config: AdamConfig | None = None):
        self.params = params
        self.config = config or AdamConfig()
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for key in sorted(self.params):  # fixed order keeps updates reproducible
            g = grads[key]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {key!r}")
            m = self.m[key]
            v = self.v[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            self.params[key] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
