"""Command-line harness: pretrain -> unlearn -> evaluate, seed sweeps, leakage checks.

Every subcommand prints one JSON object on stdout when it succeeds and
exits 0.  On failure it prints ``{"error": <code>, "message": ...}`` on stderr
and exits with the code in :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, kernels
from .data import SPLITS, detect_leakage, read_dataset, split_checksum, write_dataset
from .errors import InvalidInputError, LabError, MissingArtifactError
from .experiment import (
    ExperimentConfig,
    MetricToggles,
    ResultTable,
    aggregate,
    load_config,
    make_data,
    make_dumps,
    pretrain,
    report_for,
    resolve_label,
    streisand_distance,
)
from .files import atomic_write_json, atomic_write_text, sha256_file
from .nn import load_checkpoint, save_checkpoint
from .schedule import accuracy, write_trajectory
from .store import (
    MANIFEST_SCHEMA,
    MANIFEST_VERSION,
    dataset_path,
    find_manifests,
    read_dumps,
    read_manifest,
    require,
    run_dir,
    write_dumps,
    write_manifest,
)
from .unlearn import retain_subset, run_method

logger = logging.getLogger("lotus_lab")

EXIT_CODES = {
    "lab_error": 1,
    "invalid_input": 2,
    "missing_artifact": 3,
    "training_failed": 4,
    "non_finite": 5,
    "leakage": 6,
}

RESULT_FILES = ("results_rows.csv", "results_summary.csv", "results.json", "results.md")


class LeakageFound(LabError):
    code = "leakage"

    def __init__(self, report):
        super().__init__(f"{len(report.cross)} cross-split duplicate pairs")
        self.report = report

    def to_dict(self):
        d = super().to_dict()
        d["report"] = self.report.to_dict()
        return d


def _config_record(cfg, config_path):
    rec = {"config": cfg.to_dict(), "config_file": None, "config_sha256": None}
    if config_path is not None:
        rec["config_file"] = str(config_path)
        rec["config_sha256"] = sha256_file(config_path)
    return rec


def _checksums(data):
    return {name: split_checksum(data.split(name)) for name in SPLITS}


def _base_manifest(kind, label, method, seed, cfg, config_path, data):
    return {
        "schema": MANIFEST_SCHEMA,
        "version": MANIFEST_VERSION,
        "kind": kind,
        "label": label,
        "method": method,
        "seed": int(seed),
        "split_checksums": _checksums(data),
        "backend": kernels.BACKEND,
        "lotus_lab_version": __version__,
        **_config_record(cfg, config_path),
    }


def cmd_pretrain(cfg, seed, out, config_path=None):
    """Generate the seed's dataset and train the original model on forget + retain."""
    data = make_data(cfg, seed)
    data.validate(require_all_classes=cfg.dataset.mode == "instance")
    write_dataset(dataset_path(out, seed), data)
    f_orig = pretrain(cfg, data, seed)
    d = run_dir(out, seed, "orig")
    save_checkpoint(f_orig, d / "checkpoint.json")
    dumps = make_dumps(f_orig, data, "orig")
    man = _base_manifest("pretrain", "orig", "orig", seed, cfg, config_path, data)
    man.update(
        checkpoint="checkpoint.json",
        checkpoint_sha256=sha256_file(d / "checkpoint.json"),
        dumps=write_dumps(d, dumps),
        metrics={"train_accuracy": accuracy(f_orig, data.train.x, data.train.y),
                 **{f"acc_{s}": dumps[s].accuracy() for s in SPLITS if len(dumps[s])}},
    )
    write_manifest(d, man)
    return man


def _load_seed_inputs(out, seed):
    odir = run_dir(out, seed, "orig")
    orig_m = read_manifest(odir / "manifest.json")
    f_orig = load_checkpoint(require(odir / orig_m["checkpoint"], "pretrained checkpoint"))
    data = read_dataset(require(dataset_path(out, seed), "dataset file"), verify=True)
    if _checksums(data) != orig_m["split_checksums"]:
        raise InvalidInputError(f"dataset for seed {seed} does not match its pretrain manifest")
    return data, f_orig, orig_m


def _gold_dumps(out, seed, splits=None):
    gdir = run_dir(out, seed, "gold")
    path = gdir / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(
            f"gold run for seed {seed} not found at {gdir}; run the gold method first "
            "or disable gold-relative metrics (metrics.jsd = false)"
        )
    return read_dumps(gdir, read_manifest(path), splits)


def cmd_unlearn(cfg, label, seed, out, config_path=None):
    """Run one method (or variant label) from the pretrained checkpoint of ``seed``."""
    method, extra = resolve_label(label)
    data, f_orig, _ = _load_seed_inputs(out, seed)
    toggles = cfg.metrics
    gold_d = None
    if label != "gold" and toggles.jsd:
        gold_d = _gold_dumps(out, seed)
    ucfg = cfg.unlearn_config(method, seed, **extra)
    res = run_method(f_orig, data, ucfg, train_cfg=cfg.pretrain)

    d = run_dir(out, seed, label)
    save_checkpoint(res.student, d / "checkpoint.json")
    dumps = make_dumps(res.student, data, label)
    files = write_dumps(d, dumps)
    if label == "gold":
        gold_d = dumps if toggles.jsd else None
    mia_ids = retain_subset(data, cfg.unlearn.retain_fraction, seed).ids
    orig_d = make_dumps(f_orig, data, "orig")
    rep = report_for(label, dumps, orig_d, mia_ids, cfg.dataset.k, gold_d, toggles, seed,
                     res.wall_time)
    trajectory = [
        {"epoch": s.epoch, "acc_forget": s.acc_forget_student,
         "acc_unseen": s.acc_unseen_teacher, "delta_acc": s.delta_acc, "tau_d": tau}
        for s, tau in res.trajectory
    ]
    if res.trajectory:
        write_trajectory(d / "trajectory.csv", res.trajectory)
    man = _base_manifest("unlearn", label, method, seed, cfg, config_path, data)
    final = res.final_snapshot
    man.update(
        unlearn=ucfg.to_dict(),
        checkpoint="checkpoint.json",
        dumps=files,
        mia_retain_ids=[int(i) for i in mia_ids],
        distill_retain_ids=None if res.retain_ids is None else [int(i) for i in res.retain_ids],
        wall_time=res.wall_time,
        metrics=rep.to_dict(),
        trajectory=trajectory,
        final_delta_acc=None if final is None else final.delta_acc,
    )
    write_manifest(d, man)
    return man


def evaluate_manifest(path, rf_only=False):
    """MetricsReport recomputed from one run's dumps.

    With ``rf_only`` the gold run is never opened, so only gold-free metrics
    (accuracies, MIA, RF-JSD, entropy) are produced.
    """
    path = Path(path)
    man = read_manifest(path)
    seed, label = man["seed"], man["label"]
    cfg = man["config"]
    toggles = MetricToggles(**cfg.get("metrics", {}))
    if rf_only:
        toggles.jsd = False
    notes = []
    sdir = path.parent.parent
    dumps = _available_dumps(path.parent, man, notes)
    orig_d = {}
    try:
        orig_m = read_manifest(sdir / "orig" / "manifest.json")
        orig_d = _available_dumps(sdir / "orig", orig_m, notes, ["unseen"])
    except LabError as exc:
        notes.append(f"orig: {exc}")
    gold_d = None
    if label == "gold":
        gold_d = dumps if toggles.jsd else None
    elif toggles.jsd:
        try:
            gold_d = _gold_dumps(sdir.parent, seed)
        except LabError as exc:
            notes.append(f"jsd/avg_gap: {exc}")
    rep = report_for(label, dumps, orig_d, man["mia_retain_ids"], cfg["dataset"]["k"], gold_d,
                     toggles, seed, man.get("wall_time"))
    rep.notes[:0] = notes
    return man, rep


def _available_dumps(directory, man, notes, splits=None):
    out = {}
    for split in (splits or man["dumps"]):
        try:
            out.update(read_dumps(directory, man, [split]))
        except LabError as exc:
            notes.append(f"{split}: {exc}")
    return out


def cmd_evaluate(manifests, out, rf_only=False, include_time=True):
    table = ResultTable()
    for p in manifests:
        man, rep = evaluate_manifest(p, rf_only=rf_only)
        table.add(man["label"], man["seed"], rep)
    if not table.rows:
        raise MissingArtifactError("no run manifests to evaluate")
    write_tables(table, out, include_time)
    return table


def write_tables(table, out, include_time=True):
    out = Path(out)
    atomic_write_text(out / "results_rows.csv", table.rows_csv(include_time))
    atomic_write_text(out / "results_summary.csv", table.summary_csv(include_time))
    atomic_write_json(out / "results.json", table.to_dict(include_time))
    atomic_write_text(out / "results.md", table.markdown(include_time))


def _sweep_labels(cfg, labels):
    labels = list(labels)
    if cfg.metrics.jsd and "gold" not in labels:
        labels.insert(0, "gold")
    # gold must exist before gold-relative metrics of the others are computed
    return sorted(labels, key=lambda m: m != "gold")


def _run_one_seed(args):
    cfg, seed, out, labels, config_path = args
    cmd_pretrain(cfg, seed, out, config_path)
    for label in labels:
        cmd_unlearn(cfg, label, seed, out, config_path)
    return seed


def cmd_sweep(cfg, out, labels=None, jobs=1, config_path=None, include_time=True):
    """All seeds x all methods, then the result tables for exactly those runs."""
    labels = _sweep_labels(cfg, cfg.methods if labels is None else labels)
    work = [(cfg, s, out, labels, config_path) for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_one_seed, work))
    else:
        for w in work:
            _run_one_seed(w)
    paths = [run_dir(out, s, label) / "manifest.json" for s in cfg.seeds for label in labels]
    return cmd_evaluate(paths, out, include_time=include_time)


ABLATION_LABELS = ("lotus", "lotus_softmax")


def ablation_rows(table, k):
    """Per-seed Gumbel vs plain-softmax comparison from a table holding both labels."""
    by = {(m, s): r for m, s, r in table.rows}
    rows = []
    for seed in sorted({s for _, s, _ in table.rows}):
        g, sm = by.get(("lotus", seed)), by.get(("lotus_softmax", seed))
        if g is None or sm is None:
            continue
        rows.append({
            "seed": seed,
            "acc_f_gumbel": g.acc_f, "acc_f_softmax": sm.acc_f,
            "jsd_gumbel": g.jsd, "jsd_softmax": sm.jsd,
            "avg_gap_gumbel": g.avg_gap, "avg_gap_softmax": sm.avg_gap,
            "w1_forget_test_gumbel": streisand_distance(g, k) if g.entropy_histograms else None,
            "w1_forget_test_softmax": streisand_distance(sm, k) if sm.entropy_histograms else None,
            "gumbel_forgets_more": bool(g.acc_f <= sm.acc_f),
        })
    return rows


def ablation_text(rows):
    cols = list(rows[0]) if rows else ["seed"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else
                              (str(r[c]) if isinstance(r[c], (bool, int)) else repr(r[c]))
                              for c in cols))
    csv_text = "\n".join(lines) + "\n"
    md = ["| Activation | Forget acc | JSD (x1e4) | Avg Gap |", "|---|---|---|---|"]
    for tag, name in (("gumbel", "Gumbel-Softmax"), ("softmax", "Softmax")):
        f = aggregate([r[f"acc_f_{tag}"] for r in rows])
        j = aggregate([None if r[f"jsd_{tag}"] is None else r[f"jsd_{tag}"] * 1e4
                       for r in rows])
        a = aggregate([r[f"avg_gap_{tag}"] for r in rows])
        md.append(f"| {name} | " + " | ".join(
            "n/a" if m is None else f"{m:.4f} ± {s:.4f}" for m, s in (f, j, a)) + " |")
    wins = sum(r["gumbel_forgets_more"] for r in rows)
    md += ["", f"Gumbel forget accuracy <= softmax forget accuracy in {wins}/{len(rows)} seeds"]
    return csv_text, "\n".join(md) + "\n"


def cmd_ablation(cfg, out, jobs=1, config_path=None):
    table = cmd_sweep(cfg, out, labels=list(ABLATION_LABELS), jobs=jobs,
                      config_path=config_path)
    rows = ablation_rows(table, cfg.dataset.k)
    csv_text, md = ablation_text(rows)
    atomic_write_text(Path(out) / "ablation.csv", csv_text)
    atomic_write_text(Path(out) / "ablation.md", md)
    return rows


def cmd_leakage_check(path):
    """Cross- and within-split duplicate report for a dataset file."""
    data = read_dataset(require(path, "dataset file"), verify=False)
    report = detect_leakage(data)
    return report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInputError(f"usage: {message}")


def build_parser():
    p = _Parser(prog="lotus-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True, method=False):
        sp.add_argument("--config", type=Path, help="experiment TOML file (defaults built in)")
        sp.add_argument("--out", type=Path, help="experiment directory (default: config run.out)")
        if seed:
            sp.add_argument("--seed", type=int, help="run seed (default: first of run.seeds)")
        if method:
            sp.add_argument("--method", required=True,
                            help="method name or variant label, e.g. lotus, gold, lotus_softmax")

    common(sub.add_parser("pretrain", help="generate data and train the original model"))
    common(sub.add_parser("unlearn", help="run one unlearning method"), method=True)

    ev = sub.add_parser("evaluate", help="metrics and result tables from run manifests")
    common(ev, seed=False)
    ev.add_argument("manifests", nargs="*", type=Path,
                    help="manifest files (default: every run under --out)")
    ev.add_argument("--rf-only", action="store_true",
                    help="gold-free metrics only; gold runs are never read")
    ev.add_argument("--no-time", action="store_true",
                    help="omit wall-time columns (byte-reproducible tables)")

    sw = sub.add_parser("sweep", help="every seed x method, then evaluate")
    common(sw, seed=False)
    sw.add_argument("--method", action="append", dest="methods",
                    help="restrict to these labels (repeatable)")
    sw.add_argument("--jobs", type=int, default=1, help="seeds run in parallel")
    sw.add_argument("--no-time", action="store_true")

    ab = sub.add_parser("ablation", help="Gumbel-Softmax vs plain softmax targets")
    common(ab, seed=False)
    ab.add_argument("--jobs", type=int, default=1)

    lk = sub.add_parser("leakage-check", help="duplicate detection across dataset splits")
    common(lk)
    lk.add_argument("--dataset", type=Path, help="dataset file (default: <out>/seed_<s>/dataset.txt)")
    return p


def _config(args):
    if args.config is not None:
        return load_config(require(args.config, "config file"))
    return ExperimentConfig()


def _dispatch(args):
    cfg = _config(args)
    out = args.out if args.out is not None else Path(cfg.out)
    seed = getattr(args, "seed", None)
    seed = cfg.seeds[0] if seed is None else seed
    cp = args.config
    if args.command == "pretrain":
        man = cmd_pretrain(cfg, seed, out, cp)
        return {"command": "pretrain", "seed": seed, "dir": str(run_dir(out, seed, "orig")),
                "metrics": man["metrics"]}
    if args.command == "unlearn":
        man = cmd_unlearn(cfg, args.method, seed, out, cp)
        return {"command": "unlearn", "method": args.method, "seed": seed,
                "dir": str(run_dir(out, seed, args.method)), "wall_time": man["wall_time"]}
    if args.command == "evaluate":
        paths = args.manifests or find_manifests(out)
        table = cmd_evaluate(paths, out, rf_only=args.rf_only, include_time=not args.no_time)
        return {"command": "evaluate", "runs": len(table.rows), "pcc_jsd_rf": table.pcc(),
                "files": [str(out / f) for f in RESULT_FILES]}
    if args.command == "sweep":
        table = cmd_sweep(cfg, out, labels=args.methods, jobs=args.jobs, config_path=cp,
                          include_time=not args.no_time)
        return {"command": "sweep", "runs": len(table.rows), "pcc_jsd_rf": table.pcc(),
                "files": [str(out / f) for f in RESULT_FILES]}
    if args.command == "ablation":
        rows = cmd_ablation(cfg, out, jobs=args.jobs, config_path=cp)
        wins = sum(r["gumbel_forgets_more"] for r in rows)
        return {"command": "ablation", "seeds": len(rows), "gumbel_forgets_more": wins,
                "files": [str(out / "ablation.csv"), str(out / "ablation.md")]}
    if args.command == "leakage-check":
        path = args.dataset if args.dataset is not None else dataset_path(out, seed)
        report = cmd_leakage_check(path)
        if report.leaked:
            raise LeakageFound(report)
        return {"command": "leakage-check", "dataset": str(path), **report.to_dict()}
    raise InvalidInputError(f"unknown command {args.command!r}")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = _dispatch(args)
    except LabError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_CODES.get(exc.code, 1)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
