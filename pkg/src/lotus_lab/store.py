"""On-disk layout of an experiment directory.

::

    <out>/seed_<s>/dataset.txt
    <out>/seed_<s>/<label>/checkpoint.json
    <out>/seed_<s>/<label>/manifest.json
    <out>/seed_<s>/<label>/trajectory.csv        (lotus runs only)
    <out>/seed_<s>/<label>/pred_<split>.csv

``<label>`` is ``orig`` for the original model, otherwise a method name or a
variant label such as ``lotus_softmax``.  Every write is atomic.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MissingArtifactError
from .files import atomic_write_json, atomic_write_text, read_json
from .metrics import PredictionDump

MANIFEST_SCHEMA = "lotus-lab/run-manifest"
MANIFEST_VERSION = 1


def seed_dir(out, seed):
    return Path(out) / f"seed_{int(seed)}"


def run_dir(out, seed, label):
    return seed_dir(out, seed) / label


def dataset_path(out, seed):
    return seed_dir(out, seed) / "dataset.txt"


def require(path, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def dump_text(dump):
    buf = io.StringIO()
    buf.write("# lotus-lab predictions v1\n")
    buf.write(f"# model={dump.model_id} split={dump.split} k={dump.k}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", *(f"p{j}" for j in range(dump.k))])
    for sid, lab, row in zip(dump.ids.tolist(), dump.labels.tolist(), dump.probs):
        w.writerow([sid, lab, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def write_dump(path, dump):
    atomic_write_text(path, dump_text(dump))


def read_dump(path):
    path = require(path, "prediction dump")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = {}
    for ln in lines:
        if ln.startswith("#"):
            for item in ln[1:].split():
                if "=" in item:
                    key, value = item.split("=", 1)
                    meta[key] = value
    body = [ln for ln in lines if not ln.startswith("#")]
    if not body:
        raise InvalidInputError(f"{path}: no header row")
    k = int(meta.get("k", len(body[0].split(",")) - 2))
    rows = list(csv.reader(body[1:]))
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    probs = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    probs = probs.reshape(len(rows), k)
    return PredictionDump(ids, labels, probs, meta.get("split", ""), meta.get("model", ""))


def write_dumps(directory, dumps):
    files = {}
    for split, dump in dumps.items():
        path = Path(directory) / f"pred_{split}.csv"
        write_dump(path, dump)
        files[split] = path.name
    return files


def read_dumps(directory, manifest, splits=None):
    files = manifest["dumps"]
    names = files if splits is None else [s for s in splits if s in files]
    missing = [s for s in (splits or []) if s not in files]
    if missing:
        raise MissingArtifactError(f"{directory}: no dumps for splits {missing}")
    return {s: read_dump(Path(directory) / files[s]) for s in names}


def write_manifest(directory, manifest):
    atomic_write_json(Path(directory) / "manifest.json", manifest)


def read_manifest(path):
    path = require(path, "run manifest")
    m = read_json(path)
    if m.get("schema") != MANIFEST_SCHEMA:
        raise InvalidInputError(f"{path}: not a run manifest")
    return m


def find_manifests(out):
    """Run manifests under ``out`` in (seed, label) order; the orig ones are skipped."""
    found = []
    for p in Path(out).glob("seed_*/*/manifest.json"):
        if p.parent.name != "orig":
            found.append(p)

    def key(p):
        return (int(p.parent.parent.name.split("_", 1)[1]), p.parent.name)

    return sorted(found, key=key)
