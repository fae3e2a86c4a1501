"""Evaluation instruments for unlearning runs.

All logarithms are natural, so divergences and entropies are in nats.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from . import kernels
from .errors import InvalidInputError

logger = logging.getLogger(__name__)

Q_FLOOR = 1e-12
N_ENTROPY_BINS = 32


@dataclass(frozen=True)
class PredictionDump:
    """Output distributions of one model over one split, row-aligned with ids."""

    ids: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    split: str = ""
    model_id: str = ""

    def __post_init__(self):
        if self.probs.ndim != 2 or len(self.ids) != len(self.probs) != len(self.labels):
            raise InvalidInputError("ids, labels and probs rows must align")

    def __len__(self):
        return len(self.ids)

    @property
    def k(self):
        return self.probs.shape[1]

    @property
    def predictions(self):
        return np.argmax(self.probs, axis=1)

    def accuracy(self):
        if len(self) == 0:
            raise InvalidInputError(f"empty dump for split {self.split!r}")
        return float(np.mean(self.predictions == self.labels))

    def select(self, ids):
        pos = {int(s): i for i, s in enumerate(self.ids.tolist())}
        try:
            idx = np.array([pos[int(s)] for s in ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"sample id {exc.args[0]} not in dump") from None
        return PredictionDump(self.ids[idx], self.labels[idx], self.probs[idx],
                              self.split, self.model_id)


def _vec(p):
    return np.asarray(p, dtype=np.float64)


def entropy(p):
    """Shannon entropy; rows of a matrix are treated independently."""
    p = _vec(p)
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def kl(p, q):
    """KL(p || q) with 0 log 0 = 0 and q floored at 1e-12."""
    p, q = _vec(p), np.maximum(_vec(q), Q_FLOOR)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    safe_p = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe_p / q), 0.0).sum(axis=-1)


def js_divergence(p, q):
    """Pointwise Jensen-Shannon divergence, row-wise for matrices."""
    p, q = _vec(p), _vec(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    rows = kernels.jsd_rows(np.ascontiguousarray(np.atleast_2d(p)),
                            np.ascontiguousarray(np.atleast_2d(q)))
    return float(rows[0]) if p.ndim == 1 else rows


def _aligned(a, b):
    if len(a) != len(b) or not np.array_equal(a.ids, b.ids):
        if len(a) != len(b) or set(a.ids.tolist()) != set(b.ids.tolist()):
            raise InvalidInputError("dumps cover different samples")
        b = b.select(a.ids)
    return a, b


def jsd_forget(dump_un, dump_gold):
    """Mean per-sample JSD between unlearned and gold outputs on the forget set."""
    a, b = _aligned(dump_un, dump_gold)
    if len(a) == 0:
        raise InvalidInputError("empty forget dump")
    return float(np.mean(js_divergence(a.probs, b.probs)))


@dataclass
class RFJSDResult:
    value: float
    classes: list
    excluded: list = field(default_factory=list)


def class_mean_distributions(dump, classes):
    out = []
    for c in classes:
        m = dump.probs[dump.labels == c].mean(axis=0)
        out.append(m / m.sum())
    return np.array(out)


def rf_jsd_detail(dump_un, dump_orig, k=None):
    """Retrain-free JSD plus which classes were averaged over."""
    if len(dump_un) == 0 or len(dump_orig) == 0:
        raise InvalidInputError("rf_jsd needs non-empty dumps")
    k = dump_un.k if k is None else k
    present_un = set(np.unique(dump_un.labels).tolist())
    present_orig = set(np.unique(dump_orig.labels).tolist())
    classes = [c for c in range(k) if c in present_un and c in present_orig]
    excluded = [c for c in range(k) if c not in classes]
    if excluded:
        warnings.warn(f"rf_jsd: classes {excluded} missing from a dump were excluded",
                      RuntimeWarning, stacklevel=3)
    if not classes:
        raise InvalidInputError("no class is present in both dumps")
    P = class_mean_distributions(dump_un, classes)
    Q = class_mean_distributions(dump_orig, classes)
    return RFJSDResult(float(np.mean(js_divergence(P, Q))), classes, excluded)


def rf_jsd(dump_un, dump_orig, k=None):
    """Class-averaged JSD between the unlearned model on forget data and the
    original model on unseen data; needs no retrained reference model."""
    return rf_jsd_detail(dump_un, dump_orig, k).value


def avg_gap(acc_un, acc_gold):
    """Mean absolute gap over the (MIA, forget, retain, test) accuracies."""
    a, b = _vec(acc_un), _vec(acc_gold)
    if a.shape != (4,) or b.shape != (4,):
        raise InvalidInputError("avg_gap takes four accuracies per model")
    return float(np.sum(np.abs(a - b)) / 4.0)


def attack_features(dump):
    """(max probability, entropy, true-class negative log-likelihood) per row."""
    p = dump.probs
    true_p = np.maximum(p[np.arange(len(p)), dump.labels], Q_FLOOR)
    return np.column_stack([p.max(axis=1), entropy(p), -np.log(true_p)])


class LogisticAttack:
    """L2-regularised logistic regression fitted by Newton's method."""

    def __init__(self, l2=1e-3, max_iter=100, tol=1e-10):
        self.l2, self.max_iter, self.tol = l2, max_iter, tol

    def fit(self, feats, labels):
        self.mu = feats.mean(axis=0)
        self.sd = feats.std(axis=0)
        self.sd[self.sd == 0] = 1.0
        X = self._design(feats)
        w = np.zeros(X.shape[1])
        reg = self.l2 * np.eye(X.shape[1])
        reg[0, 0] = 0.0
        for _ in range(self.max_iter):
            p = _sigmoid(X @ w)
            grad = X.T @ (p - labels) / len(X) + reg @ w
            H = (X.T * (p * (1 - p))) @ X / len(X) + reg + 1e-12 * np.eye(len(w))
            step = np.linalg.solve(H, grad)
            w -= step
            if np.max(np.abs(step)) < self.tol:
                break
        self.w = w
        return self

    def _design(self, feats):
        return np.column_stack([np.ones(len(feats)), (feats - self.mu) / self.sd])

    def predict_proba(self, feats):
        return _sigmoid(self._design(feats) @ self.w)

    def predict(self, feats):
        return (self.predict_proba(feats) >= 0.5).astype(np.int64)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MIAResult:
    acc_mia: float
    holdout_accuracy: float
    n_train: int


def mia_detail(dump_retain, dump_test, dump_forget, seed=0, holdout=0.2):
    """Fit the attacker on members (retain) vs non-members (test) and score forget."""
    if min(len(dump_retain), len(dump_test), len(dump_forget)) == 0:
        raise InvalidInputError("mia needs non-empty retain, test and forget dumps")
    rng = np.random.default_rng(seed)
    n = min(len(dump_retain), len(dump_test))
    mem = attack_features(dump_retain)[rng.permutation(len(dump_retain))[:n]]
    non = attack_features(dump_test)[rng.permutation(len(dump_test))[:n]]
    feats = np.concatenate([mem, non])
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    order = rng.permutation(2 * n)
    n_hold = int(round(holdout * 2 * n))
    hold, train = order[:n_hold], order[n_hold:]
    if len(np.unique(labels[train])) < 2:
        raise InvalidInputError("attack training data holds a single class")
    attack = LogisticAttack().fit(feats[train], labels[train])
    hold_acc = (
        float(np.mean(attack.predict(feats[hold]) == labels[hold])) if n_hold else float("nan")
    )
    acc = float(np.mean(attack.predict(attack_features(dump_forget)) == 1))
    return MIAResult(acc, hold_acc, len(train))


def mia_accuracy(dump_retain, dump_test, dump_forget, seed=0):
    """Fraction of forget samples the confidence attack labels as training members."""
    return mia_detail(dump_retain, dump_test, dump_forget, seed).acc_mia


@dataclass
class FanoReport:
    error_probability: float
    conditional_entropy: float
    bound: float
    tight_bound: float
    alphabet_size: int
    holds: bool


def fano_check(joint, alphabet_size=None, tol=1e-12):
    """Brute-force check of P_e >= (H(X | Y) - 1) / log|A| on a joint table.

    ``joint[x, y]`` is the probability of true value ``x`` and prediction ``y``;
    the estimate is the prediction itself, so errors are the off-diagonal mass.
    Entropies are in nats.  ``tight_bound`` replaces the constant 1 by
    ``log 2`` (one bit in nats), which is the sharper form of the same bound.
    """
    joint = _vec(joint)
    if joint.ndim != 2 or np.any(joint < 0) or not math.isclose(joint.sum(), 1.0, abs_tol=1e-9):
        raise InvalidInputError("joint must be a non-negative table summing to 1")
    size = joint.shape[0] if alphabet_size is None else alphabet_size
    if size < 2:
        raise InvalidInputError("alphabet size must be >= 2")
    n = min(joint.shape)
    p_e = 1.0 - float(np.trace(joint[:n, :n]))
    py = joint.sum(axis=0)
    cond = np.where(joint > 0, joint / np.where(py > 0, py, 1.0)[None, :], 1.0)
    h = float(-np.sum(np.where(joint > 0, joint * np.log(cond), 0.0)))
    bound = (h - 1.0) / math.log(size)
    tight = (h - math.log(2)) / math.log(size)
    return FanoReport(p_e, h, bound, tight, size, p_e + tol >= bound)


def pearson(xs, ys):
    x, y = _vec(xs), _vec(ys)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise InvalidInputError("pearson needs two equal-length sequences of length >= 3")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise InvalidInputError("correlation undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def entropy_bin_edges(k, bins=N_ENTROPY_BINS):
    return np.linspace(0.0, math.log(k), bins + 1)


def entropy_histogram(dump, bins=N_ENTROPY_BINS):
    """Counts of per-sample entropies in ``bins`` equal bins over [0, ln k]."""
    h = entropy(dump.probs)
    edges = entropy_bin_edges(dump.k, bins)
    idx = np.clip(np.floor(h / edges[-1] * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins)


def entropy_histograms(dumps, bins=N_ENTROPY_BINS):
    """``{split: counts}`` for a mapping of split name to dump."""
    out = {}
    for name, dump in dumps.items():
        if len(dump) == 0:
            raise InvalidInputError(f"empty dump for split {name!r}")
        out[name] = entropy_histogram(dump, bins)
    return out


def histogram_w1(counts_a, counts_b, k, bins=N_ENTROPY_BINS):
    """First Wasserstein distance between two entropy histograms (bin centres)."""
    edges = entropy_bin_edges(k, bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return float(wasserstein_distance(centres, centres, counts_a, counts_b))


@dataclass
class MetricsReport:
    acc_f: float | None = None
    acc_r: float | None = None
    acc_t: float | None = None
    acc_mia: float | None = None
    avg_gap: float | None = None
    jsd: float | None = None
    rf_jsd: float | None = None
    entropy_histograms: dict = field(default_factory=dict)
    pcc: float | None = None
    wall_time: float | None = None
    notes: list = field(default_factory=list)

    @property
    def accuracies(self):
        return [self.acc_mia, self.acc_f, self.acc_r, self.acc_t]

    def to_dict(self):
        d = asdict(self)
        d["entropy_histograms"] = {k: [int(c) for c in v]
                                   for k, v in self.entropy_histograms.items()}
        return d
