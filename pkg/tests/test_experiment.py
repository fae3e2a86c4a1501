import csv
import io
from pathlib import Path

import numpy as np
import pytest

from lotus_lab.errors import InvalidInputError
from lotus_lab.experiment import (
    BASELINE_OVERRIDES,
    DatasetConfig,
    ExperimentConfig,
    ResultTable,
    aggregate,
    load_config,
    resolve_label,
    run_seed,
    stream,
    table_from_seed_runs,
)
from lotus_lab.metrics import MetricsReport
from lotus_lab.unlearn import TrainConfig, UnlearnConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config(**kw):
    return ExperimentConfig(
        dataset=DatasetConfig(k=3, dim=4, n_per_class=60, spread=0.6),
        pretrain=TrainConfig(epochs=20, accuracy_floor=0.5),
        unlearn=UnlearnConfig(epochs=2),
        **kw,
    )


def test_shipped_configs_parse():
    desk = load_config(CONFIGS / "desk.toml")
    assert desk.dataset.mode == "instance" and desk.pretrain.accuracy_floor == 0.9
    assert desk.overrides == BASELINE_OVERRIDES
    assert set(desk.methods) >= {"gold", "lotus"}
    cls = load_config(CONFIGS / "class.toml")
    assert cls.dataset.mode == "class"
    assert cls.unlearn_config("lotus", 0).mode == "class"


def test_toml_sections_and_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(
        "[dataset]\nk = 4\n[unlearn]\nepochs = 3\n"
        "[overrides.lotus]\nlearning_rate = 0.05\n"
        "[run]\nmethods = ['gold', 'lotus', 'finetune']\nseeds = [3, 4]\nout = 'x'\n"
    )
    cfg = load_config(p)
    assert cfg.dataset.k == 4 and cfg.seeds == [3, 4] and cfg.out == "x"
    assert cfg.pretrain.accuracy_floor == 0.9
    lot = cfg.unlearn_config("lotus", 3)
    assert lot.learning_rate == 0.05 and lot.epochs == 3 and lot.seed == 3
    # a file-level [overrides] table replaces the built-in baseline defaults
    assert cfg.unlearn_config("finetune", 3).learning_rate == UnlearnConfig().learning_rate
    assert cfg.unlearn_config("lotus", 3, learning_rate=0.2).learning_rate == 0.2


@pytest.mark.parametrize("text", [
    "[dataset]\nwidth = 3\n",
    "[run]\nparallel = true\n",
    "colour = 'red'\n",
    "[overrides.lotus]\nmode = 'class'\n",
    "[overrides.magic]\nepochs = 2\n",
    "[run]\nmethods = ['magic']\n",
    "[run]\nseeds = []\n",
])
def test_bad_config_rejected(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(InvalidInputError):
        load_config(p)


def test_baseline_overrides_applied_by_default():
    cfg = ExperimentConfig()
    for m in BASELINE_OVERRIDES:
        u = cfg.unlearn_config(m, 0)
        assert (u.learning_rate, u.batch_size) == (1e-2, 16)
    assert cfg.unlearn_config("lotus", 0).learning_rate == 1e-3
    cfg.overrides["finetune"]["learning_rate"] = 5.0
    assert ExperimentConfig().overrides["finetune"]["learning_rate"] == 1e-2


def test_resolve_label():
    assert resolve_label("lotus_softmax") == ("lotus", {"activation": "softmax"})
    assert resolve_label("gold") == ("gold", {})
    with pytest.raises(InvalidInputError):
        resolve_label("nothing")


def test_streams_independent():
    vals = {stream(s, t) for s in range(5) for t in range(4)}
    assert len(vals) == 20
    assert stream(2, 1) == stream(2, 1)


def test_aggregate():
    assert aggregate([1.0, None, 3.0]) == (2.0, pytest.approx(np.sqrt(2)))
    assert aggregate([4.0]) == (4.0, 0.0)
    assert aggregate([None]) == (None, None)


def _table(rng):
    t = ResultTable()
    for m in ("gold", "lotus", "finetune"):
        for s in range(4):
            jsd = 0.0 if m == "gold" else float(rng.uniform(0, 0.01))
            t.add(m, s, MetricsReport(acc_f=float(rng.uniform()), acc_r=float(rng.uniform()),
                                      acc_t=float(rng.uniform()), acc_mia=float(rng.uniform()),
                                      avg_gap=float(rng.uniform()), jsd=jsd,
                                      rf_jsd=jsd * 0.5 + float(rng.uniform(0, 1e-3)),
                                      wall_time=float(rng.uniform())))
    return t


def test_summary_recomputable_from_rows(rng):
    t = _table(rng)
    rows = list(csv.DictReader(io.StringIO(t.rows_csv())))
    summary = {r["method"]: r for r in csv.DictReader(io.StringIO(t.summary_csv()))}
    for m in ("gold", "lotus", "finetune"):
        mine = [r for r in rows if r["method"] == m]
        assert int(summary[m]["n"]) == len(mine) == 4
        for col, tag, scale in (("avg_gap", "avg_gap", 1), ("jsd", "jsd_x1e4", 1e4),
                                ("acc_mia", "acc_mia", 1), ("wall_time", "wall_time", 1)):
            vals = np.array([float(r[col]) for r in mine]) * scale
            assert abs(vals.mean() - float(summary[m][f"{tag}_mean"])) <= 1e-9
            assert abs(vals.std(ddof=1) - float(summary[m][f"{tag}_std"])) <= 1e-9


def test_time_column_optional(rng):
    t = _table(rng)
    assert "wall_time" not in t.rows_csv(include_time=False)
    assert "wall_time" not in t.summary_csv(include_time=False)
    assert "Time" not in t.markdown(include_time=False)
    assert "wall_time" not in t.to_dict(include_time=False)["rows"][0]


def test_markdown_layout(rng):
    t = _table(rng)
    md = t.markdown().splitlines()
    assert md[0] == "| Method | Avg Gap | JSD (x1e4) | RF-JSD (x1e4) | Time (s) |"
    assert [ln.split("|")[1].strip() for ln in md[2:5]] == ["gold", "lotus", "finetune"]
    assert "±" in md[3]
    assert md[-1].startswith("PCC(JSD, RF-JSD) = ")


def test_missing_metric_rendered_as_gap():
    t = ResultTable()
    t.add("lotus", 0, MetricsReport(acc_f=0.5, notes=["jsd: no gold"]))
    assert "n/a" in t.markdown()
    row = t.rows_csv().splitlines()[1].split(",")
    assert row[0] == "lotus" and row[-1] == "jsd: no gold" and "" in row


def test_pcc_ignores_gold(rng):
    t = _table(rng)
    no_gold = ResultTable([r for r in t.rows if r[0] != "gold"])
    assert t.pcc() == no_gold.pcc()


def test_run_seed_reports():
    cfg = small_config(methods=["lotus", "finetune"])
    sr = run_seed(cfg, 0, variants={"lotus_softmax": ("lotus", {"activation": "softmax"})})
    assert set(sr.reports) == {"orig", "gold", "lotus", "finetune", "lotus_softmax"}
    gold = sr.reports["gold"]
    assert gold.avg_gap == 0.0 and gold.jsd == 0.0
    for label in ("lotus", "finetune", "lotus_softmax"):
        rep = sr.reports[label]
        assert rep.notes == [] and 0 <= rep.avg_gap <= 1 and rep.jsd >= 0
    table = table_from_seed_runs([sr])
    assert "orig" not in table.methods()
    again = run_seed(cfg, 0)
    assert again.reports["lotus"].jsd == sr.reports["lotus"].jsd
