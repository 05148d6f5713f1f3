"""Class labels from continuous bandwidth/duration values.

Dividers are ordered boundary arrays mapping a continuous value to one of
n+1 classes.  Optimal dividers are midpoints between sorted per-class means
of a labeled subset.  Boundary convention: class j+1 = [div_j, div_{j+1}),
lower-inclusive, so every finite value maps to exactly one class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from flowmtl.errors import ConfigError
from flowmtl.flow import FlowSample


def _check_increasing(values: Sequence[float], name: str):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or len(arr) < 1:
        raise ConfigError(f"{name} dividers must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} dividers must be finite")
    if not np.all(np.diff(arr) > 0):
        raise ConfigError(f"{name} dividers must be strictly increasing, got {list(values)}")


@dataclass(frozen=True)
class DividerSet:
    """Bandwidth (kbps) and duration (s) class boundaries."""

    bw: tuple[float, ...]
    dur: tuple[float, ...]

    def __post_init__(self):
        _check_increasing(self.bw, "bandwidth")
        _check_increasing(self.dur, "duration")

    @property
    def n_bw_classes(self) -> int:
        return len(self.bw) + 1

    @property
    def n_dur_classes(self) -> int:
        return len(self.dur) + 1

    @classmethod
    def from_lists(cls, bw: Sequence[float], dur: Sequence[float]) -> "DividerSet":
        return cls(bw=tuple(float(v) for v in bw), dur=tuple(float(v) for v in dur))


def assign_class(value: float, dividers: Sequence[float]) -> int:
    """1-indexed class of `value`: below div_1 is 1, at or above div_last is len+1."""
    if not np.isfinite(value):
        raise ConfigError(f"cannot classify non-finite value {value!r}")
    return int(np.searchsorted(np.asarray(dividers), value, side="right")) + 1


def compute_dividers(values_by_class: Mapping[object, Sequence[float]]) -> list[float]:
    """Midpoints between consecutive sorted per-class means.

    n classes yield n-1 strictly increasing dividers; equal class means make
    a degenerate divider and raise.
    """
    if len(values_by_class) < 2:
        raise ConfigError("need at least 2 classes to compute dividers")
    means = []
    for cls_id, values in values_by_class.items():
        if len(values) == 0:
            raise ConfigError(f"class {cls_id!r} has no values")
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"class {cls_id!r} contains non-finite values")
        means.append(float(arr.mean()))
    means.sort()
    dividers = []
    for lo, hi in zip(means, means[1:]):
        if lo == hi:
            raise ConfigError(f"degenerate divider: two class means equal at {lo}")
        dividers.append((lo + hi) / 2.0)
    return dividers


@dataclass(frozen=True)
class TaskLabels:
    """Per-flow supervision: bandwidth/duration classes always present,
    traffic class only for the retained labeled subset (mask 1)."""

    y_bw: int
    y_dur: int
    y_traffic: int | None = None

    @property
    def traffic_mask(self) -> int:
        return 0 if self.y_traffic is None else 1


def sample_labeled_flows(traffic_labels: Sequence[int | None], labeled_per_class: int,
                         seed: int) -> list[int]:
    """Uniformly sample labeled_per_class indices per traffic class, without replacement.

    Deterministic in `seed`; indices are returned sorted.  Flows without a
    ground-truth label are never sampled.
    """
    if labeled_per_class < 0:
        raise ConfigError(f"labeled_per_class must be >= 0, got {labeled_per_class}")
    if labeled_per_class == 0:
        return []
    pools: dict[int, list[int]] = {}
    for i, label in enumerate(traffic_labels):
        if label is not None:
            pools.setdefault(label, []).append(i)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for cls_id in sorted(pools):
        pool = pools[cls_id]
        if len(pool) < labeled_per_class:
            raise ConfigError(
                f"class {cls_id} has only {len(pool)} labeled flows, "
                f"need {labeled_per_class}")
        chosen.extend(rng.choice(pool, size=labeled_per_class, replace=False).tolist())
    return sorted(chosen)


def build_label_set(flows: Sequence[FlowSample], dividers: DividerSet,
                    labeled_per_class: int, seed: int) -> list[TaskLabels]:
    """Task labels for every flow: bw/dur classes from the dividers for all,
    traffic class retained for exactly labeled_per_class flows per class."""
    retained = set(sample_labeled_flows(
        [f.traffic_label for f in flows], labeled_per_class, seed))
    out = []
    for i, flow in enumerate(flows):
        out.append(TaskLabels(
            y_bw=assign_class(flow.bandwidth, dividers.bw),
            y_dur=assign_class(flow.duration, dividers.dur),
            y_traffic=flow.traffic_label if i in retained else None,
        ))
    return out


def dividers_from_flows(flows: Sequence[FlowSample], indices: Sequence[int] | None = None,
                        ) -> DividerSet:
    """Optimal dividers from (a subset of) labeled flows: per-traffic-class
    bandwidth and duration means, sorted, midpointed."""
    subset = flows if indices is None else [flows[i] for i in indices]
    bw_by_class: dict[int, list[float]] = {}
    dur_by_class: dict[int, list[float]] = {}
    for flow in subset:
        if flow.traffic_label is None:
            raise ConfigError("divider derivation needs flows with traffic labels")
        bw_by_class.setdefault(flow.traffic_label, []).append(flow.bandwidth)
        dur_by_class.setdefault(flow.traffic_label, []).append(flow.duration)
    return DividerSet.from_lists(
        bw=compute_dividers(bw_by_class),
        dur=compute_dividers(dur_by_class),
    )
