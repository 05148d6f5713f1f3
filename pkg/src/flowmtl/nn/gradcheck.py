"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Scalar = float
LossFn = Callable[[], Scalar]


def finite_difference(loss_fn: LossFn, param: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of loss_fn with respect to every entry of param (in place perturbation)."""
    grad = np.zeros_like(param)
    flat = param.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return grad


@dataclass
class ParamCheck:
    name: str
    n: int
    n_failed: int
    max_abs_diff: float
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.n_failed == 0


@dataclass
class GradCheckReport:
    checks: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def n_params(self) -> int:
        return sum(c.n for c in self.checks)

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"{status} {c.name}: {c.n - c.n_failed}/{c.n} coordinates ok, "
                f"max_rel_err={c.max_rel_err:.3e}")
        return lines


def compare_grads(name: str, analytic: np.ndarray, numeric: np.ndarray,
                  rtol: float = 1e-4, atol: float = 1e-7) -> ParamCheck:
    """Coordinate-wise |a - f| <= atol + rtol * max(|a|, |f|).

    The absolute floor keeps exactly-zero gradients (masked heads, dead ReLU
    units) from tripping the relative criterion on finite-difference noise.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    failed = diff > atol + rtol * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, diff / scale, 0.0)
    return ParamCheck(
        name=name,
        n=analytic.size,
        n_failed=int(failed.sum()),
        max_abs_diff=float(diff.max(initial=0.0)),
        max_rel_err=float(rel.max(initial=0.0)),
    )


def check_gradients(loss_fn: LossFn, params: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], h: float = 1e-4,
                    rtol: float = 1e-4, atol: float = 1e-7) -> GradCheckReport:
    """Check every parameter of a model against central finite differences.

    loss_fn must re-evaluate the scalar loss using the (possibly perturbed)
    arrays in params; analytic holds the hand-derived gradients of the same
    scalar.
    """
    report = GradCheckReport()
    for name in sorted(params):
        numeric = finite_difference(loss_fn, params[name], h=h)
        report.checks.append(compare_grads(name, analytic[name], numeric, rtol=rtol, atol=atol))
    return report
