"""Hard-parameter-sharing model: shared conv trunk, per-task softmax heads,
masked weighted multi-task loss, Adam training loop, JSON checkpoints.

The trunk follows the reference structure (Conv32, Conv32, Pool, Conv64,
Conv64, Pool, Conv128, Conv128, Pool, FC256, FC256, kernel 3 / pool 2) with
one 128-filter conv removed for input lengths 30 and 45, where the full
stack would collapse to a zero-dimensional vector.

Loss semantics: total = sum_i [ xent_bw_i + xent_dur_i + lambda * mask_i *
xent_traffic_i ] over the batch (sum, not mean).  The mask multiplies both
the per-sample traffic loss and its gradient, so unlabeled samples
contribute exactly zero to the traffic head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from flowmtl.errors import ConfigError, DataFormatError, NumericalError, ShapeError
from flowmtl.labels import TaskLabels
from flowmtl.nn.adam import Adam, AdamConfig
from flowmtl.nn.layers import Conv1D, Dense, Flatten, MaxPool1D, ReLU, Sequential
from flowmtl.nn.losses import softmax, softmax_xent, xent_grad

TRUNK_STAGES_FULL = ((32, 32), (64, 64), (128, 128))
TRUNK_STAGES_REDUCED = ((32, 32), (64, 64), (128,))
REDUCED_TRUNK_LENGTHS = (30, 45)


@dataclass(frozen=True)
class Architecture:
    """Shapes of the shared trunk and its heads.

    conv_stages: per stage, the conv filter counts; every stage ends in a
    2-wide max pool.  heads: ordered (name, n_classes) pairs, all attached
    to the last dense layer's output.
    """

    k: int
    heads: tuple[tuple[str, int], ...]
    in_channels: int = 2
    conv_stages: tuple[tuple[int, ...], ...] = TRUNK_STAGES_FULL
    conv_kernel: int = 3
    fc_sizes: tuple[int, ...] = (256, 256)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_stages"] = [list(s) for s in self.conv_stages]
        d["fc_sizes"] = list(self.fc_sizes)
        d["heads"] = [[name, n] for name, n in self.heads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            k=d["k"],
            heads=tuple((name, n) for name, n in d["heads"]),
            in_channels=d["in_channels"],
            conv_stages=tuple(tuple(s) for s in d["conv_stages"]),
            conv_kernel=d["conv_kernel"],
            fc_sizes=tuple(d["fc_sizes"]),
        )


def mtl_architecture(k: int, n_bw: int = 5, n_dur: int = 5, n_traffic: int = 5,
                     reduced: bool | None = None) -> Architecture:
    """Three-head architecture for input length k.

    reduced=None drops one 128-filter conv automatically for k in {30, 45};
    pass False to force the full trunk (which fails shape validation at
    k=30) or True to force the reduced one.
    """
    if reduced is None:
        reduced = k in REDUCED_TRUNK_LENGTHS
    return Architecture(
        k=k,
        heads=(("bandwidth", n_bw), ("duration", n_dur), ("traffic", n_traffic)),
        conv_stages=TRUNK_STAGES_REDUCED if reduced else TRUNK_STAGES_FULL,
    )


def single_task_architecture(k: int, task: str, n_classes: int,
                             reduced: bool | None = None) -> Architecture:
    base = mtl_architecture(k, reduced=reduced)
    return Architecture(k=k, heads=((task, n_classes),), conv_stages=base.conv_stages)


def tiny_architecture(k: int = 12, n_bw: int = 5, n_dur: int = 5,
                      n_traffic: int = 5) -> Architecture:
    """Small configuration for finite-difference gradient checks."""
    return Architecture(
        k=k,
        heads=(("bandwidth", n_bw), ("duration", n_dur), ("traffic", n_traffic)),
        conv_stages=((4, 8), (16,)),
        fc_sizes=(16,),
    )


@dataclass
class LossResult:
    total: float
    per_head_weighted: dict[str, float]
    per_head_losses: dict[str, np.ndarray]  # unweighted per-sample values


class MultiHeadNet:
    """Shared trunk feeding one dense softmax head per task."""

    def __init__(self, arch: Architecture, seed: int = 0):
        self.arch = arch
        rng = np.random.default_rng(seed)
        layers = []
        shape = (arch.k, arch.in_channels)
        c_in = arch.in_channels
        for stage in arch.conv_stages:
            for filters in stage:
                conv = Conv1D(c_in, filters, kernel=arch.conv_kernel, rng=rng)
                shape = conv.output_shape(shape)  # raises on zero-dimensional collapse
                layers.extend([conv, ReLU()])
                c_in = filters
            pool = MaxPool1D()
            shape = pool.output_shape(shape)
            layers.append(pool)
        flatten = Flatten()
        shape = flatten.output_shape(shape)
        layers.append(flatten)
        width = shape[0]
        if width == 0:
            raise ShapeError("trunk flattens to a zero-dimensional vector")
        for n_out in arch.fc_sizes:
            dense = Dense(width, n_out, rng=rng)
            shape = dense.output_shape(shape)
            layers.extend([dense, ReLU()])
            width = n_out
        self.trunk = Sequential(layers)
        self.trunk_width = width
        self.heads = {name: Dense(width, n, rng=rng) for name, n in arch.heads}

    @property
    def head_names(self) -> list[str]:
        return [name for name, _ in self.arch.heads]

    def params(self) -> dict[str, np.ndarray]:
        out = {f"trunk.{k}": v for k, v in self.trunk.params().items()}
        for name, head in self.heads.items():
            for pname, arr in head.params.items():
                out[f"head.{name}.{pname}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"trunk.{k}": v for k, v in self.trunk.grads().items()}
        for name, head in self.heads.items():
            for pname, arr in head.grads.items():
                out[f"head.{name}.{pname}"] = arr
        return out

    def set_params(self, values: dict[str, np.ndarray]):
        own = self.params()
        if set(own) != set(values):
            raise ConfigError("parameter names do not match this architecture")
        for key, arr in own.items():
            src = np.asarray(values[key], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"parameter {key} has shape {src.shape}, expected {arr.shape}")
            arr[...] = src

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.arch.k or x.shape[2] != self.arch.in_channels:
            raise ShapeError(
                f"expected input (batch, {self.arch.k}, {self.arch.in_channels}), "
                f"got {x.shape}")
        return x

    def forward_trunk(self, x: np.ndarray) -> np.ndarray:
        return self.trunk.forward(self._check_input(x))

    def head_probs(self, h: np.ndarray) -> dict[str, np.ndarray]:
        return {name: softmax(head.forward(h)) for name, head in self.heads.items()}

    def forward(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Probability vectors per head; one shared trunk pass."""
        return self.head_probs(self.forward_trunk(x))

    def loss_and_grads(self, x: np.ndarray, targets: dict[str, np.ndarray],
                       weights: dict[str, np.ndarray]):
        """Weighted-sum loss over the batch and its exact gradients.

        targets: per head, (B,) 0-indexed classes; weights: per head, (B,)
        per-sample multipliers (mask and task weight folded in).
        """
        x = self._check_input(x)
        if x.shape[0] == 0:
            raise DataFormatError("empty batch")
        h = self.trunk.forward(x)
        dh = np.zeros_like(h)
        per_head_weighted: dict[str, float] = {}
        per_head_losses: dict[str, np.ndarray] = {}
        for name in self.head_names:
            head = self.heads[name]
            logits = head.forward(h)
            losses, probs = softmax_xent(logits, targets[name])
            w = np.asarray(weights[name], dtype=np.float64)
            per_head_losses[name] = losses
            per_head_weighted[name] = float((losses * w).sum())
            dh += head.backward(xent_grad(probs, targets[name], w))
        self.trunk.backward(dh)
        total = float(sum(per_head_weighted[name] for name in self.head_names))
        result = LossResult(total=total, per_head_weighted=per_head_weighted,
                            per_head_losses=per_head_losses)
        return result, self.grads()

    def predict(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """1-indexed argmax class per head."""
        probs = self.forward(x)
        return {name: p.argmax(axis=1) + 1 for name, p in probs.items()}


@dataclass
class MtlLoss:
    """Masked multi-task loss decomposition for one batch."""

    total: float
    bw: float
    dur: float
    traffic_masked: float    # sum_i mask_i * xent_i, before the lambda weight
    traffic_weighted: float  # lambda * traffic_masked
    n_labeled: int


def mtl_targets_weights(labels: Sequence[TaskLabels], lam: float):
    """0-indexed target arrays and per-sample weights for the three heads."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n = len(labels)
    mask = np.array([lbl.traffic_mask for lbl in labels], dtype=np.float64)
    targets = {
        "bandwidth": np.array([lbl.y_bw - 1 for lbl in labels]),
        "duration": np.array([lbl.y_dur - 1 for lbl in labels]),
        "traffic": np.array([(lbl.y_traffic or 1) - 1 for lbl in labels]),
    }
    weights = {
        "bandwidth": np.ones(n),
        "duration": np.ones(n),
        "traffic": lam * mask,
    }
    return targets, weights, mask


def masked_mtl_loss(model: MultiHeadNet, x: np.ndarray, labels: Sequence[TaskLabels],
                    lam: float = 1.0):
    """Masked lambda-weighted loss over a batch, with gradients.

    Returns (MtlLoss, grads).  The mask zeroes both the per-sample traffic
    loss and every gradient flowing out of the traffic head for unlabeled
    samples.
    """
    if len(labels) == 0:
        raise DataFormatError("empty batch")
    targets, weights, mask = mtl_targets_weights(labels, lam)
    result, grads = model.loss_and_grads(x, targets, weights)
    traffic_masked = float((result.per_head_losses["traffic"] * mask).sum())
    bw = result.per_head_weighted["bandwidth"]
    dur = result.per_head_weighted["duration"]
    traffic_weighted = lam * traffic_masked
    loss = MtlLoss(
        total=bw + dur + traffic_weighted,
        bw=bw,
        dur=dur,
        traffic_masked=traffic_masked,
        traffic_weighted=traffic_weighted,
        n_labeled=int(mask.sum()),
    )
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    shuffle: bool = True
    early_stop_patience: int = 0      # epochs without relative improvement; 0 disables
    early_stop_min_delta: float = 1e-3


@dataclass
class EpochStats:
    epoch: int
    total: float
    per_head: dict[str, float]
    n_samples: int


def train(model: MultiHeadNet, x: np.ndarray, targets: dict[str, np.ndarray],
          weights: dict[str, np.ndarray], cfg: TrainConfig) -> list[EpochStats]:
    """Generic Adam loop over shuffled mini-batches; per-sample gradients
    (batch sums scaled by 1/batch) keep the learning rate batch-size stable."""
    n = x.shape[0]
    if n == 0:
        raise DataFormatError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(model.params(), cfg.adam)
    history: list[EpochStats] = []
    best = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_total = 0.0
        epoch_heads = {name: 0.0 for name in model.head_names}
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            bt = {name: t[idx] for name, t in targets.items()}
            bw_ = {name: w[idx] for name, w in weights.items()}
            result, grads = model.loss_and_grads(x[idx], bt, bw_)
            if not np.isfinite(result.total):
                raise NumericalError(f"loss diverged (non-finite) at epoch {epoch}")
            scale = 1.0 / len(idx)
            adam.step({k: g * scale for k, g in grads.items()})
            epoch_total += result.total
            for name, v in result.per_head_weighted.items():
                epoch_heads[name] += v
        history.append(EpochStats(epoch=epoch, total=epoch_total,
                                  per_head=epoch_heads, n_samples=n))
        if cfg.early_stop_patience > 0:
            if epoch_total < best - cfg.early_stop_min_delta * abs(best):
                best = epoch_total
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    return history


def train_mtl(model: MultiHeadNet, x: np.ndarray, labels: Sequence[TaskLabels],
              cfg: TrainConfig) -> list[EpochStats]:
    """Train the three-head model under the masked weighted objective."""
    targets, weights, _ = mtl_targets_weights(labels, cfg.lam)
    return train(model, x, targets, weights, cfg)


CHECKPOINT_FORMAT = "flowmtl-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_to_json(model: MultiHeadNet, meta: dict | None = None) -> str:
    """Versioned JSON checkpoint; float lists use shortest-repr decimals, so
    a save/load round trip is bit-exact."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.arch.to_dict(),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(model.params().items())
        },
        "meta": meta or {},
    }
    return json.dumps(payload, sort_keys=True)


def save_checkpoint(path: str, model: MultiHeadNet, meta: dict | None = None):
    with open(path, "w") as fh:
        fh.write(checkpoint_to_json(model, meta))
        fh.write("\n")


def load_checkpoint(path: str) -> MultiHeadNet:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: bad checkpoint JSON: {exc}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{path}: not a flowmtl checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = MultiHeadNet(Architecture.from_dict(payload["architecture"]))
    model.set_params({
        name: np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in payload["params"].items()
    })
    return model
