"""Synthetic labeled data, four-way splits and duplicate detection.

Samples are kept as struct-of-arrays (:class:`Samples`) so every split can be
fed straight into the network.  A :class:`SplitDataset` holds the forget,
retain, unseen and test splits of one experiment.
"""

from __future__ import annotations

import csv
import hashlib
import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .files import atomic_write_text, sha256_text

SPLITS = ("forget", "retain", "unseen", "test")


@dataclass(frozen=True)
class Samples:
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not (len(self.ids) == len(self.x) == len(self.y)):
            raise InvalidInputError("ids, x and y must have equal length")

    def __len__(self):
        return len(self.ids)

    def take(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Samples(self.ids[index], self.x[index], self.y[index])

    def classes(self):
        return np.unique(self.y)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        return cls(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
        )


@dataclass(frozen=True)
class SplitSpec:
    forget_fraction: float = 0.1
    stratified: bool = True
    seed: int = 0
    unseen_fraction: float = 0.2
    test_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.forget_fraction < 1.0:
            raise InvalidInputError("forget_fraction must lie in (0, 1)")
        if self.unseen_fraction <= 0 or self.test_fraction <= 0:
            raise InvalidInputError("unseen and test fractions must be > 0")
        if self.unseen_fraction + self.test_fraction >= 1.0:
            raise InvalidInputError("unseen + test fractions leave no training data")


@dataclass(frozen=True)
class SplitDataset:
    forget: Samples
    retain: Samples
    unseen: Samples
    test: Samples
    k: int

    def split(self, name):
        if name not in SPLITS:
            raise InvalidInputError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def train(self):
        return Samples.concat([self.forget, self.retain])

    def validate(self, require_all_classes=True):
        """Assert pairwise disjointness by id and by content hash."""
        seen_ids = {}
        seen_hash = {}
        for name in SPLITS:
            s = self.split(name)
            for sid, x in zip(s.ids.tolist(), s.x):
                if sid in seen_ids and seen_ids[sid] != name:
                    raise InvalidInputError(f"id {sid} in both {seen_ids[sid]} and {name}")
                seen_ids[sid] = name
                h = content_hash(x)
                if h in seen_hash and seen_hash[h] != name:
                    raise InvalidInputError(
                        f"identical input in {seen_hash[h]} and {name} (id {sid})"
                    )
                seen_hash[h] = name
            if require_all_classes and len(s) and len(s.classes()) != self.k:
                raise InvalidInputError(f"split {name} misses a class")
        return self


def generate_blobs(k, n_per_class, dim, spread, seed, center_scale=1.0, center_shift=0.0):
    """Isotropic Gaussian clusters with seeded centers, ``n_per_class`` each.

    ``center_shift`` moves every center by a seeded random offset of that
    length; with the same ``seed`` this yields a shifted copy of the same
    class geometry.
    """
    if k < 2 or n_per_class < 4 or dim < 2:
        raise InvalidInputError("need k >= 2, n_per_class >= 4, dim >= 2")
    if not spread > 0:
        raise InvalidInputError(f"spread must be > 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(k, dim))
    noise = rng.normal(size=(k * n_per_class, dim))
    if center_shift:
        # drawn after the samples so the unshifted geometry is reproduced exactly
        direction = rng.normal(size=(k, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        centers = centers + center_shift * direction
    y = np.repeat(np.arange(k), n_per_class)
    x = centers[y] + spread * noise
    return Samples(np.arange(k * n_per_class, dtype=np.int64), x, y), centers


def _carve(n, fraction):
    return int(round(n * fraction))


def _split_index(y, spec, rng):
    """Return (unseen, test, train) index arrays, stratified by class if asked."""
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if spec.stratified else [
        np.arange(len(y))
    ]
    unseen, test, train = [], [], []
    for idx in groups:
        idx = rng.permutation(idx)
        nu, nt = _carve(len(idx), spec.unseen_fraction), _carve(len(idx), spec.test_fraction)
        unseen.append(idx[:nu])
        test.append(idx[nu : nu + nt])
        train.append(idx[nu + nt :])
    return np.concatenate(unseen), np.concatenate(test), np.concatenate(train)


def make_splits(samples, spec, k=None):
    """Partition into unseen/test/train, then carve forget from train."""
    k = int(samples.y.max()) + 1 if k is None else k
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        for c in range(k):
            n_c = int(np.sum(samples.y == c))
            n_train = n_c - _carve(n_c, spec.unseen_fraction) - _carve(n_c, spec.test_fraction)
            n_forget = _carve(n_train, spec.forget_fraction)
            if min(_carve(n_c, spec.unseen_fraction), _carve(n_c, spec.test_fraction),
                   n_forget, n_train - n_forget) < 1:
                raise InvalidInputError(f"class {c} has too few samples ({n_c}) for the splits")
    unseen_i, test_i, train_i = _split_index(samples.y, spec, rng)
    train = samples.take(train_i)
    if spec.stratified:
        groups = [np.flatnonzero(train.y == c) for c in range(k)]
    else:
        groups = [np.arange(len(train))]
    forget_i, retain_i = [], []
    for idx in groups:
        idx = rng.permutation(idx)
        nf = _carve(len(idx), spec.forget_fraction)
        forget_i.append(idx[:nf])
        retain_i.append(idx[nf:])
    out = SplitDataset(
        forget=_sorted(train.take(np.concatenate(forget_i))),
        retain=_sorted(train.take(np.concatenate(retain_i))),
        unseen=_sorted(samples.take(unseen_i)),
        test=_sorted(samples.take(test_i)),
        k=k,
    )
    return out.validate(require_all_classes=spec.stratified)


def make_class_splits(samples, forget_class, spec, k=None):
    """Every training sample of ``forget_class`` is forgotten, the rest retained."""
    k = int(samples.y.max()) + 1 if k is None else k
    if not 0 <= forget_class < k:
        raise InvalidInputError(f"forget_class {forget_class} outside [0, {k})")
    rng = np.random.default_rng(spec.seed)
    unseen_i, test_i, train_i = _split_index(samples.y, spec, rng)
    train = samples.take(train_i)
    in_class = train.y == forget_class
    out = SplitDataset(
        forget=_sorted(train.take(np.flatnonzero(in_class))),
        retain=_sorted(train.take(np.flatnonzero(~in_class))),
        unseen=_sorted(samples.take(unseen_i)),
        test=_sorted(samples.take(test_i)),
        k=k,
    )
    return out.validate(require_all_classes=False)


def _sorted(s):
    return s.take(np.argsort(s.ids, kind="stable"))


def stratified_subset(samples, fraction, seed):
    """A per-class ``fraction`` of ``samples`` (at least one per present class)."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return samples
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(samples.y):
        idx = rng.permutation(np.flatnonzero(samples.y == c))
        keep.append(idx[: max(1, _carve(len(idx), fraction))])
    return _sorted(samples.take(np.concatenate(keep)))


def content_hash(x):
    """64-bit hash of the canonical little-endian float64 bytes of one input."""
    raw = np.ascontiguousarray(x, dtype="<f8").tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


@dataclass
class LeakageReport:
    within: list = field(default_factory=list)
    cross: list = field(default_factory=list)

    @property
    def leaked(self):
        return bool(self.cross)

    def to_dict(self):
        def fmt(pair):
            (sa, ia), (sb, ib) = pair
            return {"a": {"split": sa, "id": ia}, "b": {"split": sb, "id": ib}}

        return {
            "leakage": self.leaked,
            "n_within": len(self.within),
            "n_cross": len(self.cross),
            "within": [fmt(p) for p in self.within],
            "cross": [fmt(p) for p in self.cross],
        }


def detect_leakage(splits):
    """Report every pair of byte-identical inputs, inside one split or across two."""
    buckets = defaultdict(list)
    for name in SPLITS:
        s = splits.split(name)
        for sid, x in zip(s.ids.tolist(), s.x):
            raw = np.ascontiguousarray(x, dtype="<f8").tobytes()
            buckets[content_hash(x)].append((name, sid, raw))
    report = LeakageReport()
    for members in buckets.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                (sa, ia, ra), (sb, ib, rb) = members[i], members[j]
                if ra != rb:
                    continue  # 64-bit collision between distinct inputs
                pair = ((sa, ia), (sb, ib))
                (report.within if sa == sb else report.cross).append(pair)
    return report


def split_checksum(s):
    """SHA-256 over the canonical text rows of one split."""
    return sha256_text("".join(_row_text("", sid, lab, x) for sid, lab, x in
                               zip(s.ids.tolist(), s.y.tolist(), s.x)))


def _row_text(tag, sid, label, x):
    return ",".join([str(sid), tag, str(label), *(repr(float(v)) for v in x)]) + "\n"


def dataset_text(splits):
    dim = splits.forget.x.shape[1]
    lines = [
        "# lotus-lab dataset v1\n",
        f"# k={splits.k}\n",
        f"# dim={dim}\n",
        "# counts " + " ".join(f"{n}={len(splits.split(n))}" for n in SPLITS) + "\n",
        "# checksums " + " ".join(f"{n}={split_checksum(splits.split(n))}" for n in SPLITS)
        + "\n",
        "id,split,label," + ",".join(f"x{i}" for i in range(dim)) + "\n",
    ]
    for name in SPLITS:
        s = splits.split(name)
        lines.extend(_row_text(name, sid, lab, x) for sid, lab, x in
                     zip(s.ids.tolist(), s.y.tolist(), s.x))
    return "".join(lines)


def write_dataset(path, splits):
    atomic_write_text(path, dataset_text(splits))


def _parse_header(lines):
    meta = {}
    for line in lines:
        body = line[1:].strip()
        if body.startswith("counts ") or body.startswith("checksums "):
            key, rest = body.split(" ", 1)
            meta[key] = dict(item.split("=", 1) for item in rest.split())
        elif "=" in body:
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


def read_dataset(path, verify=True):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    header = [ln for ln in text.splitlines() if ln.startswith("#")]
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))
    meta = _parse_header(header)
    k, dim = int(meta["k"]), int(meta["dim"])
    rows = defaultdict(list)
    reader = csv.reader(io.StringIO(body))
    next(reader)
    for row in reader:
        sid, tag, label, *xs = row
        if len(xs) != dim:
            raise InvalidInputError(f"row {sid}: expected {dim} features, got {len(xs)}")
        rows[tag].append((int(sid), int(label), [float(v) for v in xs]))
    parts = {}
    for name in SPLITS:
        r = rows.get(name, [])
        parts[name] = Samples(
            np.array([a for a, _, _ in r], dtype=np.int64),
            np.array([c for _, _, c in r], dtype=np.float64).reshape(len(r), dim),
            np.array([b for _, b, _ in r], dtype=np.int64),
        )
    splits = SplitDataset(k=k, **parts)
    if verify:
        for name in SPLITS:
            if int(meta["counts"][name]) != len(parts[name]):
                raise InvalidInputError(f"split {name}: count mismatch")
            if meta["checksums"][name] != split_checksum(parts[name]):
                raise InvalidInputError(f"split {name}: checksum mismatch")
    return splits
