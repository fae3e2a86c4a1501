"""In-memory experiment pipeline: data -> original model -> unlearning -> metrics.

The CLI persists every stage to disk; this module holds the logic the CLI
and the acceptance suite share.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics
from .data import SplitSpec, generate_blobs, make_class_splits, make_splits
from .errors import InvalidInputError, LabError
from .gumbel import softmax
from .metrics import MetricsReport, PredictionDump
from .nn import forward, init_net
from .unlearn import (
    METHODS,
    TrainConfig,
    UnlearnConfig,
    retain_subset,
    run_method,
    train_classifier,
)

DUMP_SPLITS = ("forget", "retain", "unseen", "test")


@dataclass
class DatasetConfig:
    k: int = 5
    dim: int = 8
    n_per_class: int = 200
    spread: float = 1.0
    center_scale: float = 1.0
    forget_fraction: float = 0.1
    unseen_fraction: float = 0.2
    test_fraction: float = 0.2
    mode: str = "instance"  # or "class"
    forget_class: int = 0


@dataclass
class NetConfig:
    hidden: list = field(default_factory=lambda: [32, 32])


@dataclass
class MetricToggles:
    mia: bool = True
    jsd: bool = True
    rf_jsd: bool = True
    entropy: bool = True


# Baselines take larger, noisier steps than the distillation default; their
# hyperparameters were tuned separately, as each method's are.
BASELINE_OVERRIDES = {
    m: {"learning_rate": 1e-2, "batch_size": 16}
    for m in ("finetune", "neggrad_plus", "random_label", "bad_teacher")
}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetConfig = field(default_factory=NetConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(accuracy_floor=0.9))
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    methods: list = field(default_factory=lambda: ["gold", "lotus"])
    metrics: MetricToggles = field(default_factory=MetricToggles)
    out: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    overrides: dict = field(default_factory=lambda: copy.deepcopy(BASELINE_OVERRIDES))

    def __post_init__(self):
        if not self.methods:
            raise InvalidInputError("an experiment needs at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidInputError(f"unknown method {m!r}")
        if not self.seeds:
            raise InvalidInputError("an experiment needs at least one seed")
        names = {f.name for f in fields(UnlearnConfig)} - {"method", "seed", "mode"}
        for m, o in self.overrides.items():
            if m not in METHODS:
                raise InvalidInputError(f"overrides for unknown method {m!r}")
            extra = set(o) - names
            if extra:
                raise InvalidInputError(f"unknown override keys for {m}: {sorted(extra)}")

    @property
    def layer_dims(self):
        return [self.dataset.dim, *self.net.hidden, self.dataset.k]

    def unlearn_config(self, method, seed, **overrides):
        # class mode switches the schedule to the zero-target variant
        d = asdict(self.unlearn)
        d.update(method=method, seed=int(seed), mode=self.dataset.mode)
        d.update(self.overrides.get(method, {}))
        d.update(overrides)
        return UnlearnConfig(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sections = {
            "dataset": DatasetConfig,
            "net": NetConfig,
            "pretrain": TrainConfig,
            "unlearn": UnlearnConfig,
            "metrics": MetricToggles,
        }
        kwargs = {}
        for name, typ in sections.items():
            if name in d:
                kwargs[name] = _build(typ, d.pop(name), name)
        if "run" in d:
            run = d.pop("run")
            for key in ("methods", "out", "seeds"):
                if key in run:
                    d[key] = run.pop(key)
            if run:
                raise InvalidInputError(f"unknown keys in [run]: {sorted(run)}")
        if "overrides" in d:
            # per-method tables replace the built-in baseline defaults
            d["overrides"] = {m: dict(o) for m, o in d.pop("overrides").items()}
        allowed = {"methods", "out", "seeds", "overrides"}
        extra = set(d) - allowed
        if extra:
            raise InvalidInputError(f"unknown config keys: {sorted(extra)}")
        kwargs.update(d)
        if "pretrain" not in kwargs:
            kwargs["pretrain"] = TrainConfig(accuracy_floor=0.9)
        return cls(**kwargs)


def _build(typ, values, section):
    names = {f.name for f in fields(typ)}
    extra = set(values) - names
    if extra:
        raise InvalidInputError(f"unknown keys in [{section}]: {sorted(extra)}")
    return typ(**values)


def load_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


def stream(seed, tag):
    """Independent integer seed for one consumer of a run seed."""
    return int(np.random.SeedSequence([int(seed), tag]).generate_state(1)[0])


DATA, SPLIT, INIT, ORDER = 0, 1, 2, 3


def make_data(cfg, seed):
    ds = cfg.dataset
    samples, _ = generate_blobs(ds.k, ds.n_per_class, ds.dim, ds.spread,
                                stream(seed, DATA), center_scale=ds.center_scale)
    spec = SplitSpec(ds.forget_fraction, True, stream(seed, SPLIT),
                     ds.unseen_fraction, ds.test_fraction)
    if ds.mode == "class":
        return make_class_splits(samples, ds.forget_class, spec, k=ds.k)
    return make_splits(samples, spec, k=ds.k)


def pretrain(cfg, data, seed):
    """Train the original model on forget + retain."""
    net = init_net(cfg.layer_dims, seed=stream(seed, INIT))
    return train_classifier(net, data.train, cfg.pretrain, seed=stream(seed, ORDER))


def make_dumps(net, data, model_id, splits=DUMP_SPLITS):
    out = {}
    for name in splits:
        s = data.split(name)
        probs = softmax(forward(net, s.x)) if len(s) else np.zeros((0, net.n_classes))
        out[name] = PredictionDump(s.ids.copy(), s.y.copy(), probs, name, model_id)
    return out


def _guarded(rep, name, fn):
    """Run one metric; a missing or unusable input becomes a note, not a failure."""
    try:
        return fn()
    except (LabError, KeyError) as exc:
        msg = f"no {exc.args[0]!r} dump" if isinstance(exc, KeyError) else str(exc)
        rep.notes.append(f"{name}: {msg}")
        return None


def evaluate(dumps_un, dumps_orig, retain_ids, k, dumps_gold=None, gold_report=None,
             toggles=None, seed=0, wall_time=None):
    """Metrics of one unlearned model.

    ``dumps_gold`` enables JSD; ``gold_report`` (the gold model's own report)
    enables Avg Gap.  Without either only gold-free metrics are produced.
    """
    toggles = toggles or MetricToggles()
    rep = MetricsReport(wall_time=wall_time)
    for attr, split in (("acc_f", "forget"), ("acc_r", "retain"), ("acc_t", "test")):
        setattr(rep, attr, _guarded(rep, attr, lambda s=split: dumps_un[s].accuracy()))
    if toggles.mia:
        rep.acc_mia = _guarded(rep, "acc_mia", lambda: metrics.mia_accuracy(
            dumps_un["retain"].select(retain_ids), dumps_un["test"], dumps_un["forget"], seed))
    if toggles.rf_jsd:
        detail = _guarded(rep, "rf_jsd", lambda: metrics.rf_jsd_detail(
            dumps_un["forget"], dumps_orig["unseen"], k))
        if detail is not None:
            rep.rf_jsd = detail.value
            if detail.excluded:
                rep.notes.append(f"rf_jsd excluded classes {detail.excluded}")
    if toggles.jsd and dumps_gold is not None:
        rep.jsd = _guarded(rep, "jsd", lambda: metrics.jsd_forget(
            dumps_un["forget"], dumps_gold["forget"]))
    if gold_report is not None and toggles.mia:
        rep.avg_gap = _guarded(rep, "avg_gap", lambda: metrics.avg_gap(
            rep.accuracies, gold_report.accuracies))
    if toggles.entropy:
        rep.entropy_histograms = _guarded(rep, "entropy", lambda: metrics.entropy_histograms(
            {s: dumps_un[s] for s in ("forget", "retain", "test")})) or {}
    return rep


def report_for(label, dumps, dumps_orig, retain_ids, k, dumps_gold=None, toggles=None,
               seed=0, wall_time=None):
    """Report of one labelled model; the gold model is scored against itself."""
    toggles = toggles or MetricToggles()
    gold_rep = None
    if dumps_gold is not None:
        gold_rep = evaluate(dumps_gold, dumps_orig, retain_ids, k, dumps_gold, None,
                            toggles, seed)
    if label == "gold" and gold_rep is not None:
        gold_rep.wall_time = wall_time
        gold_rep.avg_gap = 0.0 if toggles.mia else None
        return gold_rep
    return evaluate(dumps, dumps_orig, retain_ids, k, dumps_gold, gold_rep, toggles, seed,
                    wall_time)


@dataclass
class SeedRun:
    """Everything one seed produces, kept in memory."""

    seed: int
    data: object
    f_orig: object
    dumps_orig: dict
    results: dict = field(default_factory=dict)
    dumps: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)


def run_seed(cfg, seed, methods=None, variants=None):
    """Pretrain, run every method and evaluate, for one seed.

    ``variants`` maps extra labels to ``(method, overrides)`` pairs, e.g.
    ``{"lotus_softmax": ("lotus", {"activation": "softmax"})}``.
    """
    methods = list(cfg.methods if methods is None else methods)
    data = make_data(cfg, seed)
    f_orig = pretrain(cfg, data, seed)
    sr = SeedRun(seed, data, f_orig, make_dumps(f_orig, data, "orig"))
    plan = [(m, m, {}) for m in methods]
    plan += [(label, m, o) for label, (m, o) in (variants or {}).items()]
    if "gold" not in methods and cfg.metrics.jsd:
        plan.insert(0, ("gold", "gold", {}))
    for label, method, overrides in plan:
        ucfg = cfg.unlearn_config(method, seed, **overrides)
        res = run_method(f_orig, data, ucfg, train_cfg=cfg.pretrain)
        sr.results[label] = res
        sr.dumps[label] = make_dumps(res.student, data, label)
    retain_ids = retain_subset(data, cfg.unlearn.retain_fraction, seed).ids
    gold_d = sr.dumps.get("gold")
    k = cfg.dataset.k
    sr.reports["orig"] = report_for("orig", sr.dumps_orig, sr.dumps_orig, retain_ids, k,
                                    gold_d, cfg.metrics, seed)
    for label, res in sr.results.items():
        sr.reports[label] = report_for(label, sr.dumps[label], sr.dumps_orig, retain_ids, k,
                                       gold_d, cfg.metrics, seed, res.wall_time)
    return sr


def aggregate(values):
    """(mean, sample std) ignoring None; std is 0 for a single value."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def pcc_jsd_rf(reports):
    """Pearson correlation of JSD and RF-JSD across reports that carry both."""
    pairs = [(r.jsd, r.rf_jsd) for r in reports if r.jsd is not None and r.rf_jsd is not None]
    if len(pairs) < 3:
        return None
    xs, ys = zip(*pairs)
    try:
        return metrics.pearson(xs, ys)
    except InvalidInputError:
        return None


def streisand_distance(report, k):
    """W1 distance between the forget and test entropy histograms of one model."""
    h = report.entropy_histograms
    return metrics.histogram_w1(h["forget"], h["test"], k)


# labels that run a method with fixed overrides, for ablations
VARIANTS = {"lotus_softmax": ("lotus", {"activation": "softmax"})}


def resolve_label(label):
    """``(method, overrides)`` for a method name or a variant label."""
    if label in VARIANTS:
        method, overrides = VARIANTS[label]
        return method, dict(overrides)
    if label in METHODS:
        return label, {}
    raise InvalidInputError(f"unknown method {label!r}")


ROW_METRICS = ("acc_f", "acc_r", "acc_t", "acc_mia", "avg_gap", "jsd", "rf_jsd", "wall_time")
# divergences are reported x 1e4 in the summary, as in the published tables
SUMMARY_SCALE = {"jsd": 1e4, "rf_jsd": 1e4}


def _cell(v):
    return "" if v is None else repr(float(v))


@dataclass
class ResultTable:
    """Per-(method, seed) metric rows plus mean and std aggregates per method."""

    rows: list = field(default_factory=list)  # (method, seed, MetricsReport)

    def add(self, method, seed, report):
        self.rows.append((method, int(seed), report))

    def methods(self):
        seen = []
        for m, _, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return seen

    def aggregates(self):
        out = {}
        for m in self.methods():
            reps = [r for mm, _, r in self.rows if mm == m]
            agg = {"n": len(reps)}
            for key in ROW_METRICS:
                agg[key] = aggregate([getattr(r, key) for r in reps])
            out[m] = agg
        return out

    def pcc(self):
        # gold's JSD is zero by construction, so it would only anchor the fit
        return pcc_jsd_rf([r for m, _, r in self.rows if m != "gold"])

    def _columns(self, include_time):
        return [c for c in ROW_METRICS if include_time or c != "wall_time"]

    def rows_csv(self, include_time=True):
        cols = self._columns(include_time)
        lines = [",".join(["method", "seed", *cols, "notes"])]
        for m, seed, r in sorted(self.rows, key=lambda t: (t[0], t[1])):
            notes = "; ".join(r.notes).replace(",", " ")
            lines.append(",".join([m, str(seed), *(_cell(getattr(r, c)) for c in cols), notes]))
        return "\n".join(lines) + "\n"

    def summary_csv(self, include_time=True):
        cols = self._columns(include_time)
        head = ["method", "n"]
        for c in cols:
            tag = f"{c}_x1e4" if c in SUMMARY_SCALE else c
            head += [f"{tag}_mean", f"{tag}_std"]
        lines = [",".join(head)]
        for m, agg in self.aggregates().items():
            cells = [m, str(agg["n"])]
            for c in cols:
                mean, std = agg[c]
                s = SUMMARY_SCALE.get(c, 1.0)
                cells += [_cell(None if mean is None else mean * s),
                          _cell(None if std is None else std * s)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def markdown(self, include_time=True):
        """Paper-style table: Avg Gap, JSD x 1e4, RF-JSD x 1e4 and time as mean ± std."""
        cols = [("avg_gap", "Avg Gap", 1.0, 4), ("jsd", "JSD (x1e4)", 1e4, 2),
                ("rf_jsd", "RF-JSD (x1e4)", 1e4, 2)]
        if include_time:
            cols.append(("wall_time", "Time (s)", 1.0, 3))
        lines = ["| Method | " + " | ".join(c[1] for c in cols) + " |",
                 "|---" * (len(cols) + 1) + "|"]
        for m, agg in self.aggregates().items():
            cells = []
            for key, _, scale, digits in cols:
                mean, std = agg[key]
                cells.append("n/a" if mean is None else
                             f"{mean * scale:.{digits}f} ± {std * scale:.{digits}f}")
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        pcc = self.pcc()
        if pcc is not None:
            lines.append("")
            lines.append(f"PCC(JSD, RF-JSD) = {pcc:.4f}")
        return "\n".join(lines) + "\n"

    def to_dict(self, include_time=True):
        drop = set() if include_time else {"wall_time"}

        def clean(d):
            return {k: v for k, v in d.items() if k not in drop}

        return {
            "rows": [dict(method=m, seed=s, **clean(r.to_dict()))
                     for m, s, r in sorted(self.rows, key=lambda t: (t[0], t[1]))],
            "aggregates": {m: {k: (list(v) if isinstance(v, tuple) else v)
                               for k, v in clean(agg).items()}
                           for m, agg in self.aggregates().items()},
            "pcc_jsd_rf": self.pcc(),
        }


def table_from_seed_runs(seed_runs, labels=None):
    table = ResultTable()
    for sr in seed_runs:
        for label, rep in sr.reports.items():
            if label == "orig" or (labels is not None and label not in labels):
                continue
            table.add(label, sr.seed, rep)
    return table
