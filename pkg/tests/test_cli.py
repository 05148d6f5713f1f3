"""Command-line interface: the synth -> ingest -> label -> train -> evaluate
-> predict chain, exit codes, config precedence, and reproducible outputs."""

import csv
import json
import os

import pytest

from flowmtl.cli import main
from flowmtl.experiment import CSV_COLUMNS

TRAIN_FLAGS = ["--k", "30", "--epochs", "2", "--batch", "32", "--seed", "0"]


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One full pipeline pass shared by the read-only assertions below."""
    d = tmp_path_factory.mktemp("cli")
    paths = {
        "packets": str(d / "packets.csv"),
        "flows": str(d / "flows.jsonl"),
        "labeled": str(d / "labeled.jsonl"),
        "dividers": str(d / "labeled.dividers.json"),
        "model": str(d / "model.json"),
        "history": str(d / "history.csv"),
        "metrics": str(d / "metrics.json"),
        "preds": str(d / "preds.csv"),
        "dir": d,
    }
    steps = [
        ["synth", "--out", paths["packets"], "--flows", "8", "--seed", "3"],
        ["ingest", "--in", paths["packets"], "--out", paths["flows"]],
        ["label", "--flows", paths["flows"], "--out", paths["labeled"],
         "--labeled-per-class", "3", "--seed", "0"],
        ["train", "--flows", paths["labeled"], "--out", paths["model"],
         "--history-out", paths["history"], "--lambda", "2", *TRAIN_FLAGS],
        ["evaluate", "--model", paths["model"], "--flows", paths["labeled"],
         "--dividers", paths["dividers"], "--out", paths["metrics"],
         "--deterministic"],
        ["predict", "--model", paths["model"], "--flows", paths["labeled"],
         "--out", paths["preds"]],
    ]
    for argv in steps:
        assert main(argv) == 0, argv[0]
    return paths


def test_synth_writes_labeled_packet_log(workdir):
    with open(workdir["packets"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "label"
    assert len(rows) > 200
    assert {r[-1] for r in rows[1:]} == {"1", "2", "3", "4", "5"}


def test_ingest_keeps_every_synthetic_flow(workdir):
    with open(workdir["flows"]) as fh:
        flows = [json.loads(line) for line in fh]
    assert len(flows) == 40
    assert all(f["traffic_label"] in range(1, 6) for f in flows)


def test_label_adds_tasks_and_divider_sidecar(workdir):
    with open(workdir["labeled"]) as fh:
        flows = [json.loads(line) for line in fh]
    assert len(flows) == 40
    assert all({"y_bw", "y_dur"} <= set(f) for f in flows)
    assert sum(f["y_traffic"] is not None for f in flows) == 15
    with open(workdir["dividers"]) as fh:
        d = json.load(fh)
    assert sorted(d["bw"]) == d["bw"] and len(d["bw"]) == 4
    assert sorted(d["dur"]) == d["dur"] and len(d["dur"]) == 4


def test_train_checkpoint_metadata_and_history(workdir):
    with open(workdir["model"]) as fh:
        ckpt = json.load(fh)
    meta = ckpt["meta"]
    assert meta["regime"] == "mtl" and meta["k"] == 30
    assert meta["epochs"] == 2 and meta["lambda"] == 2.0
    assert meta["n_flows"] == 40 and meta["n_labeled"] == 15
    assert not any("time" in key or "created" in key for key in ckpt)
    with open(workdir["history"]) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["head"] for r in rows} == {"bandwidth", "duration", "traffic"}
    assert len(rows) == 2 * 3
    assert all(r["stage"] == "train" for r in rows)


def test_evaluate_metrics_schema(workdir):
    with open(workdir["metrics"]) as fh:
        m = json.load(fh)
    assert m["format"] == "flowmtl-metrics" and m["version"] == 1
    assert "created" not in m  # suppressed by --deterministic
    assert m["n_flows"] == 40
    assert set(m["accuracy"]) == {"bandwidth", "duration", "traffic"}
    for task, acc in m["accuracy"].items():
        assert 0.0 <= acc <= 1.0
        assert sum(map(sum, m["confusion"][task])) == 40


def test_predict_csv_agrees_with_evaluate(workdir):
    with open(workdir["preds"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40
    assert set(rows[0]) == {"flow_id", "bw_class", "dur_class",
                            "traffic_class", "p_traffic_max"}
    with open(workdir["labeled"]) as fh:
        truth = [json.loads(line)["traffic_label"] for line in fh]
    hits = sum(int(r["traffic_class"]) == t for r, t in zip(rows, truth))
    with open(workdir["metrics"]) as fh:
        m = json.load(fh)
    assert hits / 40 == pytest.approx(m["accuracy"]["traffic"])
    assert all(0.0 < float(r["p_traffic_max"]) <= 1.0 for r in rows)


def test_train_evaluate_predict_are_reproducible(workdir, capsys):
    d = workdir["dir"]
    model2 = str(d / "model2.json")
    rc, _, _ = run(capsys, "train", "--flows", workdir["labeled"], "--out", model2,
                   "--lambda", "2", *TRAIN_FLAGS)
    assert rc == 0
    with open(workdir["model"], "rb") as a, open(model2, "rb") as b:
        assert a.read() == b.read()

    metrics2 = str(d / "metrics2.json")
    rc, _, _ = run(capsys, "evaluate", "--model", workdir["model"], "--flows",
                   workdir["labeled"], "--dividers", workdir["dividers"],
                   "--out", metrics2, "--deterministic")
    assert rc == 0
    with open(workdir["metrics"], "rb") as a, open(metrics2, "rb") as b:
        assert a.read() == b.read()

    preds2 = str(d / "preds2.csv")
    rc, _, _ = run(capsys, "predict", "--model", workdir["model"], "--flows",
                   workdir["labeled"], "--out", preds2)
    assert rc == 0
    with open(workdir["preds"], "rb") as a, open(preds2, "rb") as b:
        assert a.read() == b.read()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_bad_csv_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("ts,src\n1,2\n")
    rc, _, err = run(capsys, "ingest", "--in", str(bad),
                     "--out", str(tmp_path / "out.jsonl"))
    assert rc == 3
    assert err.startswith("error:data-format:")


def test_missing_input_exits_4(tmp_path, capsys):
    rc, _, err = run(capsys, "train", "--flows", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "m.json"))
    assert rc == 4
    assert err.startswith("error:config: cannot access")


def test_impossible_architecture_exits_4(workdir, tmp_path, capsys):
    rc, _, err = run(capsys, "train", "--flows", workdir["labeled"],
                     "--out", str(tmp_path / "m.json"), "--k", "2",
                     "--epochs", "1")
    assert rc == 4
    assert err.startswith("error:shape:")
    assert "zero-dimensional" in err


def test_gradcheck_pass_and_fail(capsys):
    rc, out, _ = run(capsys, "gradcheck", "--k", "12", "--seed", "0")
    assert rc == 0
    assert "ok" in out
    rc, _, err = run(capsys, "gradcheck", "--k", "12", "--tol", "1e-12",
                     "--atol", "0")
    assert rc == 5
    assert err.startswith("error:numerical:")


def test_config_file_supplies_defaults_and_flags_win(workdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 30, "epochs": 1, "batch": 32, "seed": 1,
                               "lam": 2}))
    model = str(tmp_path / "from-config.json")
    rc, _, _ = run(capsys, "train", "--config", str(cfg),
                   "--flows", workdir["labeled"], "--out", model)
    assert rc == 0
    with open(model) as fh:
        meta = json.load(fh)["meta"]
    assert (meta["k"], meta["epochs"], meta["seed"]) == (30, 1, 1)

    overridden = str(tmp_path / "override.json")
    rc, _, _ = run(capsys, "train", "--config", str(cfg), "--epochs", "2",
                   "--flows", workdir["labeled"], "--out", overridden)
    assert rc == 0
    with open(overridden) as fh:
        assert json.load(fh)["meta"]["epochs"] == 2


def test_config_env_var_fallback(workdir, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "env-cfg.json"
    cfg.write_text(json.dumps({"k": 30, "epochs": 1, "batch": 32, "lam": 2}))
    monkeypatch.setenv("FLOWMTL_CONFIG", str(cfg))
    model = str(tmp_path / "from-env.json")
    rc, _, _ = run(capsys, "train", "--flows", workdir["labeled"], "--out", model)
    assert rc == 0
    with open(model) as fh:
        assert json.load(fh)["meta"]["epochs"] == 1


def test_config_file_must_be_json_object(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    rc, _, err = run(capsys, "synth", "--config", str(cfg),
                     "--out", str(tmp_path / "p.csv"))
    assert rc == 3
    assert err.startswith("error:data-format:")


def test_label_with_explicit_dividers(workdir, tmp_path, capsys):
    given = tmp_path / "given.json"
    given.write_text(json.dumps({"bw": [10.0, 50.0, 100.0, 200.0],
                                 "dur": [5.0, 20.0, 45.0, 90.0]}))
    out = str(tmp_path / "relabeled.jsonl")
    rc, msg, _ = run(capsys, "label", "--flows", workdir["flows"], "--out", out,
                     "--dividers", str(given), "--labeled-per-class", "3")
    assert rc == 0
    assert "explicit" in msg
    sidecar = os.path.splitext(out)[0] + ".dividers.json"
    with open(sidecar) as fh:
        assert json.load(fh) == {"bw": [10.0, 50.0, 100.0, 200.0],
                                 "dur": [5.0, 20.0, 45.0, 90.0]}


def test_sweep_writes_cells_and_combined_csv(workdir, tmp_path, capsys):
    out_dir = str(tmp_path / "sweep")
    rc, out, _ = run(capsys, "sweep", "--flows", workdir["labeled"],
                     "--axis", "lambda", "--values", "[1.0, 4.0]",
                     "--seeds", "0", "--labeled-per-class", "3",
                     "--epochs", "1", "--batch", "32", "--k", "30",
                     "--out-dir", out_dir)
    assert rc == 0
    assert out.count("[ok]") == 2
    for i in range(2):
        with open(os.path.join(out_dir, f"lambda-{i:02d}.json")) as fh:
            cell = json.load(fh)
        assert cell["status"] == "ok"
        assert cell["report"]["regime"] == "mtl"
    with open(os.path.join(out_dir, "combined.csv")) as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == list(CSV_COLUMNS)
        assert len(list(reader)) == 2 * 1 * 3


def test_sweep_continues_after_failed_cell(workdir, tmp_path, capsys):
    out_dir = str(tmp_path / "sweep-k")
    rc, out, _ = run(capsys, "sweep", "--flows", workdir["labeled"],
                     "--axis", "k", "--values", "[2, 30]", "--seeds", "0",
                     "--labeled-per-class", "3", "--epochs", "1",
                     "--batch", "32", "--out-dir", out_dir)
    assert rc == 0
    assert "[failed]" in out and "[ok]" in out


def test_sweep_all_cells_failed_exits_nonzero(workdir, tmp_path, capsys):
    rc, _, err = run(capsys, "sweep", "--flows", workdir["labeled"],
                     "--axis", "k", "--values", "[2]", "--seeds", "0",
                     "--epochs", "1", "--out-dir", str(tmp_path / "s"))
    assert rc == 1
    assert "failed" in err
