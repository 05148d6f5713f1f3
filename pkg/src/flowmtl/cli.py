"""Command-line driver for the full pipeline.

One binary with subcommands covering synth -> ingest -> label -> train ->
evaluate/predict, plus the sweep harness and a gradient self-check.  Every
flag has a config-file equivalent (a flat JSON object whose keys are the
flag names with dashes as underscores); flags win over the config file,
which is named by --config or the FLOWMTL_CONFIG environment variable.

Exit codes: 0 ok, 2 usage, 3 data format, 4 shape/config, 5 numerical.
Failures print a single machine-parseable `error:<category>: <message>`
line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import sys

import numpy as np

from .baselines import TransferPlan, train_single_task, train_transfer
from .errors import ConfigError, DataFormatError, FlowMtlError, NumericalError
from .experiment import (ALL_TASKS, LAMBDA_RATIO, REGIMES, SWEEP_AXES,
                         ExperimentConfig, resolve_lambda, sweep,
                         write_combined_csv)
from .flow import features_for_flows, segment_flows
from .gradcheck import check_model_gradients
from .labels import DividerSet, TaskLabels, build_label_set, dividers_from_flows, sample_labeled_flows
from .model import (MultiHeadNet, TrainConfig, load_checkpoint,
                    mtl_architecture, save_checkpoint, train_mtl)
from .nn.adam import AdamConfig
from .pktio import (read_dividers_json, read_flows_jsonl, read_packet_csv,
                    write_dividers_json, write_flows_jsonl, write_packet_csv)
from .synth import DEFAULT_PROFILES, synth_packets

log = logging.getLogger(__name__)

CONFIG_ENV = "FLOWMTL_CONFIG"


def load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: bad config JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise DataFormatError(f"{path}: config must be a flat JSON object")
    return obj


class Options:
    """Merged view of parsed flags and the config file; flags win."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = vars(args)
        self._config = config

    def get(self, dest, default=None, cast=None, required=False):
        value = self._args.get(dest)
        if value is None:
            value = self._config.get(dest)
        if value is None:
            value = default
        if value is None:
            if required:
                raise ConfigError(f"missing required option --{dest.replace('_', '-')}")
            return None
        if cast is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for --{dest.replace('_', '-')}: {exc}") from None
        return value


def parse_lambda(value):
    """A loss weight: a number, or the preset that resolves to the
    unlabeled/labeled sample ratio."""
    if isinstance(value, str):
        if value == LAMBDA_RATIO:
            return LAMBDA_RATIO
        return float(value)
    return float(value)


def parse_seeds(value) -> tuple[int, ...]:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return tuple(int(v) for v in value)


def _iso_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- subcommands

def cmd_synth(opt: Options) -> int:
    out = opt.get("out", required=True, cast=str)
    n_classes = opt.get("classes", 5, int)
    per_class = opt.get("flows", 500, int)
    seed = opt.get("seed", 0, int)
    spread = opt.get("start_spread", 600.0, float)
    if not 2 <= n_classes <= len(DEFAULT_PROFILES):
        raise ConfigError(
            f"--classes must be in [2, {len(DEFAULT_PROFILES)}], got {n_classes}")
    packets = synth_packets(per_class, seed=seed,
                            profiles=DEFAULT_PROFILES[:n_classes],
                            start_spread=spread)
    write_packet_csv(out, packets, with_labels=True)
    print(f"wrote {len(packets)} packets ({n_classes} classes x {per_class} flows) to {out}")
    return 0


def cmd_ingest(opt: Options) -> int:
    src = opt.get("in_path", required=True, cast=str)
    out = opt.get("out", required=True, cast=str)
    udp_timeout = opt.get("udp_timeout", 15.0, float)
    min_packets = opt.get("min_packets", 1, int)
    packets = read_packet_csv(src)
    flows = segment_flows(packets, udp_timeout=udp_timeout)
    kept = [f for f in flows if len(f) >= min_packets]
    write_flows_jsonl(out, kept)
    print(f"{len(packets)} packets -> {len(flows)} flows, "
          f"{len(kept)} kept (>= {min_packets} packets) -> {out}")
    return 0


def cmd_label(opt: Options) -> int:
    flows_path = opt.get("flows", required=True, cast=str)
    out = opt.get("out", required=True, cast=str)
    labeled_per_class = opt.get("labeled_per_class", 20, int)
    seed = opt.get("seed", 0, int)
    dividers_path = opt.get("dividers", cast=str)
    dividers_out = opt.get("dividers_out", cast=str)
    if dividers_out is None:
        dividers_out = os.path.splitext(out)[0] + ".dividers.json"

    flows, _ = read_flows_jsonl(flows_path)
    if not flows:
        raise DataFormatError(f"{flows_path}: no flows")
    if dividers_path is not None:
        obj = read_dividers_json(dividers_path)
        dividers = DividerSet.from_lists(obj["bw"], obj["dur"])
        source = "explicit"
    elif labeled_per_class > 0:
        subset = sample_labeled_flows([f.traffic_label for f in flows],
                                      labeled_per_class, seed)
        dividers = dividers_from_flows(flows, subset)
        source = "labeled-subset"
    else:
        dividers = dividers_from_flows(flows)
        source = "all-flows"

    labels = build_label_set(flows, dividers, labeled_per_class, seed)
    write_flows_jsonl(out, flows, extra=[
        {"y_bw": l.y_bw, "y_dur": l.y_dur, "y_traffic": l.y_traffic} for l in labels])
    write_dividers_json(dividers_out, list(dividers.bw), list(dividers.dur))
    n_labeled = sum(1 for l in labels if l.y_traffic is not None)
    print(f"{len(flows)} flows labeled ({n_labeled} with traffic labels), "
          f"dividers from {source} -> {out}, {dividers_out}")
    return 0


def _labels_from_raw(raw: list[dict], path: str) -> list[TaskLabels]:
    labels = []
    for i, obj in enumerate(raw):
        if "y_bw" not in obj or "y_dur" not in obj:
            raise DataFormatError(
                f"{path}: flow {i} has no task labels; run the label step first")
        labels.append(TaskLabels(y_bw=int(obj["y_bw"]), y_dur=int(obj["y_dur"]),
                                 y_traffic=obj.get("y_traffic")))
    return labels


def _check_class_range(labels: list[TaskLabels], n_bw: int, n_dur: int, n_traffic: int):
    for i, l in enumerate(labels):
        if not 1 <= l.y_bw <= n_bw or not 1 <= l.y_dur <= n_dur:
            raise ConfigError(
                f"flow {i} has class ({l.y_bw}, {l.y_dur}) outside "
                f"1..({n_bw}, {n_dur}); adjust --bw-classes/--dur-classes")
        if l.y_traffic is not None and not 1 <= l.y_traffic <= n_traffic:
            raise ConfigError(
                f"flow {i} has traffic class {l.y_traffic} outside 1..{n_traffic}")


def _write_history_csv(path: str, stages: list[tuple[str, list]]):
    """Long-format loss curves: one row per (stage, epoch, head)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "total", "head", "loss"])
        for stage, history in stages:
            for ep in history:
                for head in sorted(ep.per_head):
                    writer.writerow([stage, ep.epoch, repr(ep.total),
                                     head, repr(ep.per_head[head])])


def cmd_train(opt: Options) -> int:
    flows_path = opt.get("flows", required=True, cast=str)
    out = opt.get("out", required=True, cast=str)
    history_out = opt.get("history_out", cast=str)
    k = opt.get("k", 60, int)
    lam_raw = opt.get("lam", 1.0, parse_lambda)
    epochs = opt.get("epochs", 30, int)
    batch = opt.get("batch", 64, int)
    lr = opt.get("lr", 1e-3, float)
    seed = opt.get("seed", 0, int)
    regime = opt.get("regime", "mtl", str)
    task = opt.get("task", "traffic", str)
    n_bw = opt.get("bw_classes", 5, int)
    n_dur = opt.get("dur_classes", 5, int)
    n_traffic = opt.get("traffic_classes", 5, int)
    patience = opt.get("patience", 0, int)
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}, expected one of {REGIMES}")
    if task not in ALL_TASKS:
        raise ConfigError(f"unknown task {task!r}, expected one of {ALL_TASKS}")

    flows, raw = read_flows_jsonl(flows_path)
    if not flows:
        raise DataFormatError(f"{flows_path}: no flows")
    labels = _labels_from_raw(raw, flows_path)
    _check_class_range(labels, n_bw, n_dur, n_traffic)
    x = features_for_flows(flows, k)
    n_labeled = sum(1 for l in labels if l.y_traffic is not None)
    lam = resolve_lambda(lam_raw, len(flows), n_labeled)
    cfg = TrainConfig(lam=lam, epochs=epochs, batch_size=batch, seed=seed,
                      adam=AdamConfig(lr=lr), early_stop_patience=patience)

    if regime == "mtl":
        model = MultiHeadNet(mtl_architecture(k, n_bw, n_dur, n_traffic), seed=seed)
        history = train_mtl(model, x, labels, cfg)
        stages = [("train", history)]
    elif regime == "single":
        n_by_task = {"bandwidth": n_bw, "duration": n_dur, "traffic": n_traffic}
        model, history = train_single_task(x, labels, task, n_by_task[task], cfg,
                                           model_seed=seed)
        stages = [("train", history)]
    else:
        plan = TransferPlan(n_bw=n_bw, n_dur=n_dur, n_traffic=n_traffic,
                            stage1=cfg, stage2=cfg)
        model, hist1, hist2 = train_transfer(x, labels, plan, model_seed=seed)
        stages = [("pretrain", hist1), ("finetune", hist2)]

    meta = {"regime": regime, "k": k, "lambda": lam,
            "lambda_requested": lam_raw, "epochs": epochs, "batch_size": batch,
            "lr": lr, "seed": seed, "n_flows": len(flows), "n_labeled": n_labeled}
    save_checkpoint(out, model, meta=meta)
    if history_out is not None:
        _write_history_csv(history_out, stages)
    final = stages[-1][1][-1]
    print(f"{regime} trained on {len(flows)} flows ({n_labeled} traffic-labeled), "
          f"final epoch loss {final.total:.4f} -> {out}")
    return 0


def _truth_for_flows(flows, dividers: DividerSet) -> dict[str, np.ndarray]:
    from .labels import assign_class
    truth = {
        "bandwidth": np.array([assign_class(f.bandwidth, dividers.bw) for f in flows]),
        "duration": np.array([assign_class(f.duration, dividers.dur) for f in flows]),
    }
    if all(f.traffic_label is not None for f in flows):
        truth["traffic"] = np.array([f.traffic_label for f in flows])
    return truth


def cmd_evaluate(opt: Options) -> int:
    model_path = opt.get("model", required=True, cast=str)
    flows_path = opt.get("flows", required=True, cast=str)
    dividers_path = opt.get("dividers", required=True, cast=str)
    out = opt.get("out", required=True, cast=str)
    deterministic = bool(opt.get("deterministic", False))

    model = load_checkpoint(model_path)
    flows, _ = read_flows_jsonl(flows_path)
    if not flows:
        raise DataFormatError(f"{flows_path}: no flows")
    obj = read_dividers_json(dividers_path)
    dividers = DividerSet.from_lists(obj["bw"], obj["dur"])
    x = features_for_flows(flows, model.arch.k)

    from .experiment import evaluate_model
    truth = _truth_for_flows(flows, dividers)
    accs, confusions = evaluate_model(model, x, truth)
    if not accs:
        raise ConfigError("no overlap between model heads and available ground truth")

    payload = {
        "format": "flowmtl-metrics",
        "version": 1,
        "n_flows": len(flows),
        "heads": model.head_names,
        "accuracy": accs,
        "confusion": confusions,
        "dividers": {"bw": list(dividers.bw), "dur": list(dividers.dur)},
    }
    if not deterministic:
        payload["created"] = _iso_now()
    with open(out, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")
    print("accuracy: " + "  ".join(f"{t}={accs[t]:.4f}" for t in sorted(accs))
          + f" ({len(flows)} flows) -> {out}")
    return 0


def cmd_predict(opt: Options) -> int:
    model_path = opt.get("model", required=True, cast=str)
    flows_path = opt.get("flows", required=True, cast=str)
    out = opt.get("out", required=True, cast=str)

    model = load_checkpoint(model_path)
    flows, raw = read_flows_jsonl(flows_path)
    if not flows:
        raise DataFormatError(f"{flows_path}: no flows")
    x = features_for_flows(flows, model.arch.k)
    probs = model.forward(x)
    preds = {name: p.argmax(axis=1) + 1 for name, p in probs.items()}

    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "bw_class", "dur_class", "traffic_class",
                         "p_traffic_max"])
        for i, obj in enumerate(raw):
            writer.writerow([
                obj.get("flow_id", i),
                preds["bandwidth"][i] if "bandwidth" in preds else "",
                preds["duration"][i] if "duration" in preds else "",
                preds["traffic"][i] if "traffic" in preds else "",
                repr(float(probs["traffic"][i].max())) if "traffic" in probs else "",
            ])
    print(f"wrote predictions for {len(flows)} flows -> {out}")
    return 0


def cmd_sweep(opt: Options) -> int:
    flows_path = opt.get("flows", required=True, cast=str)
    axis = opt.get("axis", required=True, cast=str)
    values_raw = opt.get("values", required=True)
    out_dir = opt.get("out_dir", required=True, cast=str)
    if isinstance(values_raw, str):
        try:
            values = json.loads(values_raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--values is not valid JSON: {exc}") from None
    else:
        values = values_raw
    if not isinstance(values, list):
        raise ConfigError("--values must be a JSON array")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")

    base = ExperimentConfig(
        regime=opt.get("regime", "mtl", str),
        labeled_per_class=opt.get("labeled_per_class", 20, int),
        k=opt.get("k", 60, int),
        lam=opt.get("lam", 1.0, parse_lambda),
        seeds=opt.get("seeds", (0, 1, 2), parse_seeds),
        test_frac=opt.get("test_frac", 0.2, float),
        epochs=opt.get("epochs", 30, int),
        batch_size=opt.get("batch", 64, int),
        lr=opt.get("lr", 1e-3, float),
        early_stop_patience=opt.get("patience", 0, int),
        dataset=flows_path,
    )
    os.makedirs(out_dir, exist_ok=True)
    cells, rows = sweep(base, axis, values)

    n_ok = 0
    for i, cell in enumerate(cells):
        cell_path = os.path.join(out_dir, f"{axis}-{i:02d}.json")
        with open(cell_path, "w") as fh:
            fh.write(json.dumps(cell.to_dict(), sort_keys=True, indent=2))
            fh.write("\n")
        if cell.status == "ok":
            n_ok += 1
            traffic = cell.report.aggregate.get("traffic", {})
            mean = traffic.get("mean")
            detail = f"traffic mean {mean:.4f}" if mean is not None else "ok"
            print(f"[ok]     {axis}={cell.value_repr}: {detail} -> {cell_path}")
        else:
            print(f"[failed] {axis}={cell.value_repr}: {cell.error} -> {cell_path}")
    csv_path = os.path.join(out_dir, "combined.csv")
    write_combined_csv(csv_path, rows)
    print(f"{n_ok}/{len(cells)} cells ok, combined rows -> {csv_path}")
    if n_ok == 0:
        raise FlowMtlError(f"all {len(cells)} sweep cells failed")
    return 0


def cmd_gradcheck(opt: Options) -> int:
    k = opt.get("k", 12, int)
    tol = opt.get("tol", 1e-4, float)
    atol = opt.get("atol", 1e-7, float)
    seed = opt.get("seed", 0, int)
    report = check_model_gradients(k=k, tol=tol, seed=seed, atol=atol)
    for line in report.summary_lines():
        print(line)
    n_failed = sum(c.n_failed for c in report.checks)
    worst = max((c.max_rel_err for c in report.checks), default=0.0)
    print(f"checked {report.n_params} parameters at tol {tol:g}: "
          f"{report.n_params - n_failed} ok, {n_failed} failed "
          f"(worst relative error {worst:.3e})")
    if not report.passed:
        raise NumericalError(
            f"{n_failed} of {report.n_params} parameter gradients "
            f"exceed tolerance {tol:g}")
    return 0


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file (flags win)")
    common.add_argument("--verbose", action="store_true", default=None,
                        help="log progress details")

    parser = argparse.ArgumentParser(
        prog="flowmtl",
        description="flow segmentation, auto-labeled tasks, and multi-task training")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled packet capture")
    p.add_argument("--out")
    p.add_argument("--classes", type=int)
    p.add_argument("--flows", type=int, help="flows per class")
    p.add_argument("--seed", type=int)
    p.add_argument("--start-spread", type=float, dest="start_spread")

    p = sub.add_parser("ingest", parents=[common],
                       help="segment a packet CSV into flow records")
    p.add_argument("--in", dest="in_path", metavar="PATH")
    p.add_argument("--out")
    p.add_argument("--udp-timeout", type=float, dest="udp_timeout")
    p.add_argument("--min-packets", type=int, dest="min_packets")

    p = sub.add_parser("label", parents=[common],
                       help="attach bandwidth/duration/traffic labels to flows")
    p.add_argument("--flows")
    p.add_argument("--out")
    p.add_argument("--labeled-per-class", type=int, dest="labeled_per_class")
    p.add_argument("--seed", type=int)
    p.add_argument("--dividers", help="explicit dividers JSON instead of deriving")
    p.add_argument("--dividers-out", dest="dividers_out")

    p = sub.add_parser("train", parents=[common],
                       help="train a model on a labeled flow file")
    p.add_argument("--flows")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--history-out", dest="history_out", help="loss curve CSV")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", help='number or "ratio"')
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--task", choices=ALL_TASKS, help="head for the single regime")
    p.add_argument("--bw-classes", type=int, dest="bw_classes")
    p.add_argument("--dur-classes", type=int, dest="dur_classes")
    p.add_argument("--traffic-classes", type=int, dest="traffic_classes")
    p.add_argument("--patience", type=int, help="early-stop patience, 0 disables")

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a checkpoint against flows with ground truth")
    p.add_argument("--model")
    p.add_argument("--flows")
    p.add_argument("--dividers")
    p.add_argument("--out", help="metrics JSON path")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="omit timestamps from the metrics file")

    p = sub.add_parser("predict", parents=[common],
                       help="write per-flow class predictions as CSV")
    p.add_argument("--model")
    p.add_argument("--flows")
    p.add_argument("--out")

    p = sub.add_parser("sweep", parents=[common],
                       help="run one experiment per axis value")
    p.add_argument("--flows")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", help="JSON array of axis values")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--labeled-per-class", type=int, dest="labeled_per_class")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", help='number or "ratio"')
    p.add_argument("--seeds", help="comma-separated, e.g. 0,1,2")
    p.add_argument("--test-frac", type=float, dest="test_frac")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="verify analytic gradients by finite differences")
    p.add_argument("--k", type=int)
    p.add_argument("--tol", type=float, help="relative tolerance")
    p.add_argument("--atol", type=float, help="absolute tolerance floor")
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config_file(args.config)
        opt = Options(args, config)
        if opt.get("verbose", False):
            logging.getLogger("flowmtl").setLevel(logging.INFO)
        return HANDLERS[args.cmd](opt)
    except FlowMtlError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        name = getattr(exc, "filename", None) or ""
        print(f"error:config: cannot access {name or 'file'}: {exc.strerror or exc}",
              file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
