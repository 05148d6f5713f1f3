"""Experiment harness: seeded train/evaluate runs over the three training
regimes, plus one-axis sweeps (label budget, input length, loss weight,
divider placement) with a combined long-format CSV for plotting.

Per seed: stratified 80/20 split, traffic-label masking on the training
side only, divider derivation from that seed's labeled subset (unless
explicit dividers are supplied), training, evaluation on held-out flows.
Test flows keep their true traffic labels so accuracy can be scored.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from flowmtl.baselines import TransferPlan, train_single_task, train_transfer
from flowmtl.errors import ConfigError, DataFormatError, FlowMtlError
from flowmtl.flow import FlowSample, features_for_flows
from flowmtl.labels import (
    DividerSet,
    TaskLabels,
    assign_class,
    build_label_set,
    dividers_from_flows,
    sample_labeled_flows,
)
from flowmtl.model import (
    EpochStats,
    MultiHeadNet,
    TrainConfig,
    mtl_architecture,
    train_mtl,
)
from flowmtl.nn.adam import AdamConfig
from flowmtl.pktio import flow_to_dict, read_flows_jsonl

REGIMES = ("mtl", "single", "transfer")
SWEEP_AXES = ("labels", "k", "lambda", "dividers")
LAMBDA_RATIO = "ratio"
ALL_TASKS = ("bandwidth", "duration", "traffic")


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = "mtl"
    labeled_per_class: int = 20
    k: int = 60
    lam: float | str = 1.0          # a number, or "ratio" for unlabeled/labeled
    dividers: DividerSet | None = None  # None derives them from the labeled subset
    seeds: tuple[int, ...] = (0, 1, 2)
    test_frac: float = 0.2
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    early_stop_patience: int = 0
    tasks: tuple[str, ...] = ("traffic",)  # single regime: which heads to train
    dataset: str | None = None             # flows JSONL path, if not passed in memory

    def validate(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not 0.0 < self.test_frac < 1.0:
            raise ConfigError(f"test_frac must be in (0, 1), got {self.test_frac}")
        if self.labeled_per_class < 0:
            raise ConfigError("labeled_per_class must be >= 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if isinstance(self.lam, str):
            if self.lam != LAMBDA_RATIO:
                raise ConfigError(f"lambda must be a number or {LAMBDA_RATIO!r}, got {self.lam!r}")
        elif self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        for task in self.tasks:
            if task not in ALL_TASKS:
                raise ConfigError(f"unknown task {task!r}")
        if self.regime == "single" and not self.tasks:
            raise ConfigError("single regime needs at least one task")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["dividers"] = "auto" if self.dividers is None else {
            "bw": list(self.dividers.bw), "dur": list(self.dividers.dur)}
        d["seeds"] = list(self.seeds)
        d["tasks"] = list(self.tasks)
        return d


def dataset_fingerprint(flows: Sequence[FlowSample]) -> str:
    """Order-sensitive sha256 over the canonical flow serialization."""
    h = hashlib.sha256()
    for i, flow in enumerate(flows):
        h.update(json.dumps(flow_to_dict(flow, i), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def split_fingerprint(train_idx: np.ndarray, test_idx: np.ndarray) -> str:
    payload = json.dumps({"train": train_idx.tolist(), "test": test_idx.tolist()})
    return hashlib.sha256(payload.encode()).hexdigest()


def traffic_class_count(flows: Sequence[FlowSample]) -> int:
    labels = {f.traffic_label for f in flows}
    if None in labels:
        raise DataFormatError("experiment flows must all carry a traffic label")
    n = len(labels)
    if labels != set(range(1, n + 1)):
        raise DataFormatError(f"traffic labels must be 1..{n}, got {sorted(labels)}")
    return n


def stratified_split(flows: Sequence[FlowSample], test_frac: float, seed: int,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, test) index arrays, stratified by traffic class."""
    by_class: dict[int, list[int]] = {}
    for i, flow in enumerate(flows):
        if flow.traffic_label is None:
            raise DataFormatError(f"flow {i} has no traffic label, cannot stratify")
        by_class.setdefault(flow.traffic_label, []).append(i)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        n_test = int(round(len(idx) * test_frac))
        if not 0 < n_test < len(idx):
            raise ConfigError(
                f"class {label}: {len(idx)} flows cannot be split at test_frac {test_frac}")
        perm = rng.permutation(len(idx))
        test.extend(idx[perm[:n_test]].tolist())
        train.extend(idx[perm[n_test:]].tolist())
    train_idx = np.array(sorted(train), dtype=np.intp)
    test_idx = np.array(sorted(test), dtype=np.intp)
    assert not set(train_idx) & set(test_idx)
    assert len(train_idx) + len(test_idx) == len(flows)
    return train_idx, test_idx


def resolve_lambda(lam: float | str, n_train: int, n_labeled: int) -> float:
    """Numeric loss weight; "ratio" resolves to unlabeled/labeled counts."""
    if isinstance(lam, str):
        if lam != LAMBDA_RATIO:
            raise ConfigError(f"unknown lambda preset {lam!r}")
        if n_labeled == 0:
            raise ConfigError("lambda preset 'ratio' needs at least one labeled sample")
        return (n_train - n_labeled) / n_labeled
    return float(lam)


def true_task_labels(flows: Sequence[FlowSample], dividers: DividerSet) -> dict[str, np.ndarray]:
    """Ground-truth class per task, 1-indexed; bw/dur follow the dividers."""
    return {
        "bandwidth": np.array([assign_class(f.bandwidth, dividers.bw) for f in flows]),
        "duration": np.array([assign_class(f.duration, dividers.dur) for f in flows]),
        "traffic": np.array([f.traffic_label for f in flows]),
    }


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> list[list[int]]:
    m = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(m, (y_true - 1, y_pred - 1), 1)
    return m.tolist()


def evaluate_model(model: MultiHeadNet, x: np.ndarray, truth: dict[str, np.ndarray],
                   ) -> tuple[dict[str, float], dict[str, list[list[int]]]]:
    """Per-task accuracy and confusion matrices for the heads the model has."""
    preds = model.predict(x)
    n_by_head = dict(model.arch.heads)
    accs: dict[str, float] = {}
    confusions: dict[str, list[list[int]]] = {}
    for task, y_pred in preds.items():
        if task not in truth:
            continue
        y_true = truth[task]
        accs[task] = float((y_pred == y_true).mean())
        confusions[task] = confusion_matrix(y_true, y_pred, n_by_head[task])
    return accs, confusions


@dataclass
class SeedResult:
    seed: int
    lambda_resolved: float | None
    n_train: int
    n_test: int
    n_labeled: int
    split_sha256: str
    dividers: dict
    accuracies: dict[str, float]
    confusions: dict[str, list[list[int]]]
    loss_curves: dict[str, list[dict]]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsReport:
    regime: str
    config: dict
    dataset_sha256: str
    per_seed: list[SeedResult]
    aggregate: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "config": self.config,
            "dataset_sha256": self.dataset_sha256,
            "per_seed": [s.to_dict() for s in self.per_seed],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _history_rows(history: list[EpochStats]) -> list[dict]:
    return [{"epoch": e.epoch, "total": e.total, **e.per_head} for e in history]


def _experiment_dividers(config: ExperimentConfig, train_flows: list[FlowSample],
                         seed: int) -> tuple[DividerSet, dict]:
    """The dividers used for one seed, plus their provenance record."""
    if config.dividers is not None:
        d = config.dividers
        return d, {"bw": list(d.bw), "dur": list(d.dur), "source": "explicit"}
    traffic = [f.traffic_label for f in train_flows]
    if config.labeled_per_class > 0:
        subset = sample_labeled_flows(traffic, config.labeled_per_class, seed)
        source = "labeled-subset"
    else:
        subset = None  # no labeled subset to derive from: fall back to all flows
        source = "all-train-flows"
    d = dividers_from_flows(train_flows, subset)
    return d, {"bw": list(d.bw), "dur": list(d.dur), "source": source}


def _run_seed(config: ExperimentConfig, flows: Sequence[FlowSample], n_traffic: int,
              seed: int) -> SeedResult:
    train_idx, test_idx = stratified_split(flows, config.test_frac, seed)
    train_flows = [flows[i] for i in train_idx]
    test_flows = [flows[i] for i in test_idx]

    dividers, divider_info = _experiment_dividers(config, train_flows, seed)
    labels = build_label_set(train_flows, dividers, config.labeled_per_class, seed)
    n_labeled = sum(lbl.traffic_mask for lbl in labels)

    x_train = features_for_flows(train_flows, config.k)
    x_test = features_for_flows(test_flows, config.k)
    truth = true_task_labels(test_flows, dividers)

    adam = AdamConfig(lr=config.lr)
    lam_resolved: float | None = None
    accs: dict[str, float] = {}
    confusions: dict[str, list[list[int]]] = {}
    curves: dict[str, list[dict]] = {}

    if config.regime == "mtl":
        lam_resolved = resolve_lambda(config.lam, len(train_flows), n_labeled)
        model = MultiHeadNet(
            mtl_architecture(config.k, n_bw=dividers.n_bw_classes,
                             n_dur=dividers.n_dur_classes, n_traffic=n_traffic),
            seed=seed)
        cfg = TrainConfig(lam=lam_resolved, epochs=config.epochs,
                          batch_size=config.batch_size, seed=seed, adam=adam,
                          early_stop_patience=config.early_stop_patience)
        curves["mtl"] = _history_rows(train_mtl(model, x_train, labels, cfg))
        accs, confusions = evaluate_model(model, x_test, truth)
    elif config.regime == "single":
        n_by_task = {"bandwidth": dividers.n_bw_classes,
                     "duration": dividers.n_dur_classes, "traffic": n_traffic}
        cfg = TrainConfig(epochs=config.epochs, batch_size=config.batch_size,
                          seed=seed, adam=adam,
                          early_stop_patience=config.early_stop_patience)
        for task in config.tasks:
            model, history = train_single_task(x_train, labels, task,
                                               n_by_task[task], cfg, model_seed=seed)
            curves[task] = _history_rows(history)
            a, c = evaluate_model(model, x_test, truth)
            accs.update(a)
            confusions.update(c)
    else:  # transfer
        stage_cfg = TrainConfig(epochs=config.epochs, batch_size=config.batch_size,
                                seed=seed, adam=adam,
                                early_stop_patience=config.early_stop_patience)
        plan = TransferPlan(n_bw=dividers.n_bw_classes, n_dur=dividers.n_dur_classes,
                            n_traffic=n_traffic, stage1=stage_cfg, stage2=stage_cfg)
        model, hist1, hist2 = train_transfer(x_train, labels, plan, model_seed=seed)
        curves["pretrain"] = _history_rows(hist1)
        curves["finetune"] = _history_rows(hist2)
        accs, confusions = evaluate_model(model, x_test, truth)

    return SeedResult(
        seed=seed,
        lambda_resolved=lam_resolved,
        n_train=len(train_flows),
        n_test=len(test_flows),
        n_labeled=n_labeled,
        split_sha256=split_fingerprint(train_idx, test_idx),
        dividers=divider_info,
        accuracies=accs,
        confusions=confusions,
        loss_curves=curves,
    )


def run_experiment(config: ExperimentConfig,
                   flows: Sequence[FlowSample] | None = None) -> MetricsReport:
    """Train and evaluate per seed, then aggregate accuracy across seeds."""
    config.validate()
    if flows is None:
        if config.dataset is None:
            raise ConfigError("no flows given and config.dataset not set")
        flows, _ = read_flows_jsonl(config.dataset)
    flows = list(flows)
    if not flows:
        raise DataFormatError("experiment dataset is empty")
    n_traffic = traffic_class_count(flows)
    # fail fast on input lengths the trunk cannot take, before any training
    mtl_architecture(config.k, n_traffic=n_traffic)

    per_seed = [_run_seed(config, flows, n_traffic, seed) for seed in config.seeds]
    tasks = sorted({task for s in per_seed for task in s.accuracies})
    aggregate = {}
    for task in tasks:
        values = [s.accuracies[task] for s in per_seed if task in s.accuracies]
        aggregate[task] = {
            "mean": float(np.mean(values)),
            "min": float(min(values)),
            "max": float(max(values)),
            "per_seed": values,
        }
    return MetricsReport(
        regime=config.regime,
        config=config.echo(),
        dataset_sha256=dataset_fingerprint(flows),
        per_seed=per_seed,
        aggregate=aggregate,
    )


def apply_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """The base config with one sweep-axis value substituted."""
    if axis == "labels":
        return dataclasses.replace(config, labeled_per_class=int(value))
    if axis == "k":
        return dataclasses.replace(config, k=int(value))
    if axis == "lambda":
        if isinstance(value, str) and value != LAMBDA_RATIO:
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(
                    f"lambda must be a number or {LAMBDA_RATIO!r}, got {value!r}") from None
        lam = value if isinstance(value, str) else float(value)
        return dataclasses.replace(config, lam=lam)
    if axis == "dividers":
        if value == "auto":
            return dataclasses.replace(config, dividers=None)
        if isinstance(value, DividerSet):
            return dataclasses.replace(config, dividers=value)
        if isinstance(value, dict) and set(value) == {"bw", "dur"}:
            return dataclasses.replace(
                config, dividers=DividerSet.from_lists(value["bw"], value["dur"]))
        raise ConfigError(
            "dividers axis values must be 'auto' or {'bw': [...], 'dur': [...]}")
    raise ConfigError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")


def axis_value_repr(value) -> str:
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    if isinstance(value, DividerSet):
        return json.dumps({"bw": list(value.bw), "dur": list(value.dur)},
                          separators=(",", ":"))
    return str(value)


@dataclass
class SweepCell:
    axis: str
    value_repr: str
    status: str               # "ok" | "failed"
    report: MetricsReport | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"axis": self.axis, "value": self.value_repr, "status": self.status}
        if self.report is not None:
            d["report"] = self.report.to_dict()
        if self.error is not None:
            d["error"] = self.error
        return d


CSV_COLUMNS = ("axis", "value", "seed", "task", "accuracy", "regime", "k",
               "lambda", "labels_per_class")


def sweep(base: ExperimentConfig, axis: str, values: Sequence,
          flows: Sequence[FlowSample] | None = None,
          ) -> tuple[list[SweepCell], list[dict]]:
    """One run_experiment per axis value, sharing seeds and dataset.

    Failed cells are recorded with their error and the sweep continues.
    Returns (cells, long-format rows for the combined CSV).
    """
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    if flows is None:
        if base.dataset is None:
            raise ConfigError("no flows given and config.dataset not set")
        flows, _ = read_flows_jsonl(base.dataset)
    flows = list(flows)
    cells: list[SweepCell] = []
    rows: list[dict] = []
    for value in values:
        vrepr = axis_value_repr(value)
        try:
            config = apply_axis(base, axis, value)
            report = run_experiment(config, flows)
        except FlowMtlError as exc:
            cells.append(SweepCell(axis=axis, value_repr=vrepr, status="failed",
                                   error=f"{exc.category}: {exc}"))
            continue
        cells.append(SweepCell(axis=axis, value_repr=vrepr, status="ok", report=report))
        for seed_result in report.per_seed:
            for task, acc in sorted(seed_result.accuracies.items()):
                rows.append({
                    "axis": axis,
                    "value": vrepr,
                    "seed": seed_result.seed,
                    "task": task,
                    "accuracy": acc,
                    "regime": config.regime,
                    "k": config.k,
                    "lambda": seed_result.lambda_resolved
                    if seed_result.lambda_resolved is not None else "",
                    "labels_per_class": config.labeled_per_class,
                })
    return cells, rows


def write_combined_csv(path: str, rows: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
