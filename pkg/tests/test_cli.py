import builtins
import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lotus_lab.cli import cmd_pretrain, main
from lotus_lab.data import Samples, SplitDataset, read_dataset, write_dataset
from lotus_lab.experiment import ExperimentConfig

SMALL = """
[dataset]
k = 3
dim = 4
n_per_class = 60
spread = {spread}

[pretrain]
epochs = {epochs}
accuracy_floor = {floor}

[unlearn]
epochs = 3

[run]
methods = ["gold", "finetune", "lotus"]
seeds = [0, 1]
"""


def write_config(tmp_path, spread=0.6, epochs=30, floor=0.5, name="c.toml", extra=""):
    p = tmp_path / name
    p.write_text(SMALL.format(spread=spread, epochs=epochs, floor=floor) + extra)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def pretrained(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "exp"
    code, stdout, _ = run(capsys, "pretrain", "--config", cfg, "--out", out, "--seed", 0)
    assert code == 0
    return cfg, out, json.loads(stdout)


def test_pipeline(pretrained, capsys):
    cfg, out, info = pretrained
    assert info["metrics"]["train_accuracy"] >= 0.5
    for method in ("gold", "lotus", "lotus_softmax"):
        code, stdout, err = run(capsys, "unlearn", "--config", cfg, "--out", out, "--seed", 0,
                                "--method", method)
        assert code == 0, err
        assert json.loads(stdout)["method"] == method
    lot = out / "seed_0" / "lotus"
    for name in ("checkpoint.json", "manifest.json", "trajectory.csv", "pred_forget.csv",
                 "pred_retain.csv", "pred_unseen.csv", "pred_test.csv"):
        assert (lot / name).exists()
    man = json.loads((lot / "manifest.json").read_text())
    assert man["schema"] == "lotus-lab/run-manifest" and len(man["trajectory"]) == 3
    assert man["unlearn"]["method"] == "lotus"

    code, stdout, _ = run(capsys, "evaluate", "--config", cfg, "--out", out)
    assert code == 0 and json.loads(stdout)["runs"] == 3
    rows = {r["method"]: r for r in read_rows(out / "results_rows.csv")}
    assert set(rows) == {"gold", "lotus", "lotus_softmax"}
    assert float(rows["gold"]["avg_gap"]) == 0.0 and float(rows["gold"]["jsd"]) == 0.0
    assert all(r["notes"] == "" for r in rows.values())
    # the stored report and the re-evaluated one agree
    assert float(rows["lotus"]["jsd"]) == pytest.approx(man["metrics"]["jsd"], abs=1e-15)
    results = json.loads((out / "results.json").read_text())
    assert {r["method"] for r in results["rows"]} == set(rows)
    assert (out / "results.md").read_text().startswith("| Method |")


def test_missing_checkpoint_exit_code(tmp_path, capsys):
    code, stdout, err = run(capsys, "unlearn", "--config", write_config(tmp_path),
                            "--out", tmp_path / "empty", "--method", "lotus")
    assert code == 3 and stdout == ""
    assert json.loads(err)["error"] == "missing_artifact"


def test_missing_gold_exit_code(pretrained, capsys):
    cfg, out, _ = pretrained
    code, _, err = run(capsys, "unlearn", "--config", cfg, "--out", out, "--method", "lotus")
    assert code == 3 and "gold" in json.loads(err)["message"]


def test_unreachable_floor_reports_accuracy(tmp_path, capsys):
    cfg = write_config(tmp_path, spread=5.0, epochs=1, floor=1.0)
    code, _, err = run(capsys, "pretrain", "--config", cfg, "--out", tmp_path / "x")
    e = json.loads(err)
    assert code == 4 and e["error"] == "training_failed" and 0.0 <= e["accuracy"] < 1.0


def test_bad_usage_exit_code(capsys):
    code, _, err = run(capsys, "forget-everything")
    assert code == 2 and json.loads(err)["error"] == "invalid_input"
    code, _, err = run(capsys, "unlearn")
    assert code == 2


def test_unknown_method_exit_code(pretrained, capsys):
    cfg, out, _ = pretrained
    code, _, err = run(capsys, "unlearn", "--config", cfg, "--out", out, "--method", "magic")
    assert code == 2


def test_separated_blobs_fit_perfectly(tmp_path, capsys):
    cfg = write_config(tmp_path, spread=1e-3, epochs=3, floor=1.0)
    code, stdout, _ = run(capsys, "pretrain", "--config", cfg, "--out", tmp_path / "x")
    assert code == 0 and json.loads(stdout)["metrics"]["train_accuracy"] == 1.0


def test_pretrain_reproducible(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert run(capsys, "pretrain", "--config", cfg, "--out", tmp_path / name)[0] == 0
    for f in ("orig/checkpoint.json", "orig/pred_test.csv"):
        a = (tmp_path / "a" / "seed_0" / f).read_bytes()
        assert a == (tmp_path / "b" / "seed_0" / f).read_bytes()
    assert (tmp_path / "a" / "seed_0" / "dataset.txt").read_bytes() == \
        (tmp_path / "b" / "seed_0" / "dataset.txt").read_bytes()


def test_default_config_meets_floor(tmp_path):
    cfg = ExperimentConfig()
    man = cmd_pretrain(cfg, 0, tmp_path)
    assert man["metrics"]["train_accuracy"] >= 0.9


def test_rf_only_never_reads_gold(pretrained, capsys, monkeypatch):
    cfg, out, _ = pretrained
    for method in ("gold", "lotus"):
        assert run(capsys, "unlearn", "--config", cfg, "--out", out, "--method", method)[0] == 0
    gold_dir = (out / "seed_0" / "gold").resolve()
    opened = []
    real_open = builtins.open

    def spy(file, *a, **kw):
        if isinstance(file, (str, Path)):
            opened.append(Path(file).resolve())
        return real_open(file, *a, **kw)

    monkeypatch.setattr(builtins, "open", spy)
    code, _, err = run(capsys, "evaluate", "--out", out, "--rf-only",
                       out / "seed_0" / "lotus" / "manifest.json")
    monkeypatch.undo()
    assert code == 0, err
    assert opened and not any(gold_dir in p.parents for p in opened)
    row = read_rows(out / "results_rows.csv")[0]
    assert row["jsd"] == "" and row["avg_gap"] == "" and float(row["rf_jsd"]) >= 0


def test_missing_gold_dump_becomes_note(pretrained, capsys):
    cfg, out, _ = pretrained
    for method in ("gold", "lotus"):
        run(capsys, "unlearn", "--config", cfg, "--out", out, "--method", method)
    (out / "seed_0" / "gold" / "pred_forget.csv").unlink()
    code, _, _ = run(capsys, "evaluate", "--out", out)
    assert code == 0
    rows = {r["method"]: r for r in read_rows(out / "results_rows.csv")}
    assert "not found" in rows["lotus"]["notes"] and rows["lotus"]["jsd"] == ""
    assert rows["lotus"]["rf_jsd"] != ""


def test_tampered_dataset_rejected(pretrained, capsys):
    cfg, out, _ = pretrained
    path = out / "seed_0" / "dataset.txt"
    lines = path.read_text().splitlines(keepends=True)
    last = lines[-1].split(",")
    last[-1] = "0.5\n"
    lines[-1] = ",".join(last)
    path.write_text("".join(lines))
    code, _, err = run(capsys, "unlearn", "--config", cfg, "--out", out, "--method", "gold")
    assert code == 2 and "checksum" in json.loads(err)["message"]


def test_sweep_tables_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        code, _, err = run(capsys, "sweep", "--config", cfg, "--out", tmp_path / name,
                           "--no-time")
        assert code == 0, err
    for f in ("results.json", "results_rows.csv", "results_summary.csv", "results.md"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_rows(tmp_path / "a" / "results_rows.csv")
    assert len(rows) == 6 and "wall_time" not in rows[0]


def test_sweep_parallel_matches_serial(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for name, jobs in (("serial", 1), ("parallel", 2)):
        code, _, err = run(capsys, "sweep", "--config", cfg, "--out", tmp_path / name,
                           "--no-time", "--jobs", jobs, "--method", "lotus")
        assert code == 0, err
    assert (tmp_path / "serial" / "results.json").read_bytes() == \
        (tmp_path / "parallel" / "results.json").read_bytes()


def test_ablation_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, stdout, _ = run(capsys, "ablation", "--config", cfg, "--out", tmp_path / "ab")
    info = json.loads(stdout)
    assert code == 0 and info["seeds"] == 2
    rows = read_rows(tmp_path / "ab" / "ablation.csv")
    assert [int(r["seed"]) for r in rows] == [0, 1]
    assert {"acc_f_gumbel", "acc_f_softmax", "w1_forget_test_gumbel"} <= set(rows[0])
    md = (tmp_path / "ab" / "ablation.md").read_text()
    assert "Gumbel-Softmax" in md and f"in {info['gumbel_forgets_more']}/2 seeds" in md


def test_leakage_check(pretrained, capsys):
    cfg, out, _ = pretrained
    code, stdout, _ = run(capsys, "leakage-check", "--out", out, "--seed", 0)
    assert code == 0 and json.loads(stdout)["leakage"] is False

    data = read_dataset(out / "seed_0" / "dataset.txt")
    x = data.test.x.copy()
    x[2] = data.forget.x[0]
    bad = SplitDataset(data.forget, data.retain, data.unseen,
                       Samples(data.test.ids, x, data.test.y), data.k)
    planted = out / "planted.txt"
    write_dataset(planted, bad)
    code, _, err = run(capsys, "leakage-check", "--dataset", planted)
    e = json.loads(err)
    assert code == 6 and e["error"] == "leakage"
    pairs = e["report"]["cross"]
    assert len(pairs) == 1
    assert {pairs[0]["a"]["split"], pairs[0]["b"]["split"]} == {"forget", "test"}
    assert np.isin([pairs[0]["a"]["id"], pairs[0]["b"]["id"]],
                   [data.forget.ids[0], data.test.ids[2]]).all()
