"""Reference training regimes the multi-task model is compared against.

Single-task: the same trunk with one softmax head, trained on one task
only; the traffic variant sees just the labeled subset.

Transfer: stage one pretrains trunk plus a joint bandwidth-x-duration head
on every sample (the two auto-derived labels combined into one class id),
stage two carries the trunk weights over bitwise, attaches a fresh traffic
head, and fine-tunes everything on the labeled subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from flowmtl.errors import ConfigError, DataFormatError
from flowmtl.labels import TaskLabels
from flowmtl.model import (
    Architecture,
    EpochStats,
    MultiHeadNet,
    TrainConfig,
    mtl_architecture,
    train,
)


def labeled_indices(labels: Sequence[TaskLabels]) -> np.ndarray:
    return np.array([i for i, lbl in enumerate(labels) if lbl.y_traffic is not None],
                    dtype=np.intp)


def _head_targets(labels: Sequence[TaskLabels], task: str) -> np.ndarray:
    if task == "bandwidth":
        return np.array([lbl.y_bw - 1 for lbl in labels])
    if task == "duration":
        return np.array([lbl.y_dur - 1 for lbl in labels])
    if task == "traffic":
        missing = [i for i, lbl in enumerate(labels) if lbl.y_traffic is None]
        if missing:
            raise ConfigError(f"sample {missing[0]} has no traffic label")
        return np.array([lbl.y_traffic - 1 for lbl in labels])
    raise ConfigError(f"unknown task {task!r}")


def single_task_net(k: int, task: str, n_classes: int, seed: int = 0,
                    reduced: bool | None = None) -> MultiHeadNet:
    base = mtl_architecture(k, reduced=reduced)
    arch = Architecture(k=k, heads=((task, n_classes),), conv_stages=base.conv_stages)
    return MultiHeadNet(arch, seed=seed)


def train_single_task(x: np.ndarray, labels: Sequence[TaskLabels], task: str,
                      n_classes: int, cfg: TrainConfig, model_seed: int = 0,
                      ) -> tuple[MultiHeadNet, list[EpochStats]]:
    """One-head baseline; the traffic task trains only on labeled samples."""
    if len(labels) != x.shape[0]:
        raise DataFormatError(f"{x.shape[0]} feature rows but {len(labels)} label rows")
    if task == "traffic":
        keep = labeled_indices(labels)
        if keep.size == 0:
            raise ConfigError("single-task traffic training needs at least one labeled sample")
        x = x[keep]
        labels = [labels[i] for i in keep]
    model = single_task_net(x.shape[1], task, n_classes, seed=model_seed)
    targets = {task: _head_targets(labels, task)}
    weights = {task: np.ones(len(labels))}
    history = train(model, x, targets, weights, cfg)
    return model, history


def joint_class(y_bw: int, y_dur: int, n_dur: int) -> int:
    """Bijective 1-indexed pairing of (bandwidth, duration) classes."""
    return (y_bw - 1) * n_dur + (y_dur - 1) + 1


def split_joint_class(y: int, n_dur: int) -> tuple[int, int]:
    q, r = divmod(y - 1, n_dur)
    return q + 1, r + 1


PRETEXT_HEAD = "bw_dur_joint"


@dataclass(frozen=True)
class TransferPlan:
    n_bw: int = 5
    n_dur: int = 5
    n_traffic: int = 5
    stage1: TrainConfig = field(default_factory=TrainConfig)
    stage2: TrainConfig = field(default_factory=TrainConfig)


def carry_trunk(src: MultiHeadNet, dst: MultiHeadNet):
    """Copy trunk parameters bitwise between models with identical trunks."""
    src_params = {k: v for k, v in src.params().items() if k.startswith("trunk.")}
    dst_params = {k: v for k, v in dst.params().items() if k.startswith("trunk.")}
    if set(src_params) != set(dst_params):
        raise ConfigError("trunk shapes differ, cannot transfer weights")
    for key, arr in dst_params.items():
        arr[...] = src_params[key]


def train_transfer(x: np.ndarray, labels: Sequence[TaskLabels], plan: TransferPlan,
                   model_seed: int = 0,
                   ) -> tuple[MultiHeadNet, list[EpochStats], list[EpochStats]]:
    """Two-stage transfer baseline.

    Returns (stage-two model, stage-one history, stage-two history).  The
    stage-two model starts from the pretrained trunk (copied bitwise), a
    freshly initialized traffic head, and a fresh optimizer; all parameters
    stay trainable during fine-tuning.
    """
    if len(labels) != x.shape[0]:
        raise DataFormatError(f"{x.shape[0]} feature rows but {len(labels)} label rows")
    k = x.shape[1]
    base = mtl_architecture(k)

    pretext = MultiHeadNet(
        Architecture(k=k, heads=((PRETEXT_HEAD, plan.n_bw * plan.n_dur),),
                     conv_stages=base.conv_stages),
        seed=model_seed)
    joint = np.array([joint_class(lbl.y_bw, lbl.y_dur, plan.n_dur) - 1 for lbl in labels])
    hist1 = train(pretext, x, {PRETEXT_HEAD: joint},
                  {PRETEXT_HEAD: np.ones(len(labels))}, plan.stage1)

    keep = labeled_indices(labels)
    if keep.size == 0:
        raise ConfigError("transfer fine-tuning needs at least one labeled sample")
    model = MultiHeadNet(
        Architecture(k=k, heads=(("traffic", plan.n_traffic),),
                     conv_stages=base.conv_stages),
        seed=model_seed + 1)
    carry_trunk(pretext, model)
    x_l = x[keep]
    labels_l = [labels[i] for i in keep]
    hist2 = train(model, x_l, {"traffic": _head_targets(labels_l, "traffic")},
                  {"traffic": np.ones(keep.size)}, plan.stage2)
    return model, hist1, hist2
