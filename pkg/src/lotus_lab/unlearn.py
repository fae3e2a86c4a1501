"""Unlearning methods on top of one soft-target training engine.

Every method reduces to minibatch steps of weighted soft-target
cross-entropy: a batch carries inputs, target distributions and a per-sample
sign (``-1`` for gradient ascent on forget samples in NegGrad+).

LoTUS distills a frozen copy of the original model into a student.  Forget
samples get Gumbel-perturbed teacher targets at the scheduled temperature;
retain samples get sharpened, near-one-hot teacher targets.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gumbel
from .data import stratified_subset
from .errors import InvalidInputError, NonFiniteError, TrainingError
from .nn import OptimizerState, adamw_step, backward, forward, forward_cache, init_net
from .schedule import INSTANCE, AccuracySnapshot, ScheduleConfig, accuracy, tau_d

METHODS = ("lotus", "gold", "finetune", "neggrad_plus", "random_label", "bad_teacher")
ACTIVATIONS = ("gumbel", "softmax")


@dataclass
class TrainConfig:
    """Settings for training a network from scratch (original and gold models)."""

    epochs: int = 100
    learning_rate: float = 3e-3
    batch_size: int = 32
    weight_decay: float = 5e-4
    accuracy_floor: float = 0.0


@dataclass
class UnlearnConfig:
    method: str = "lotus"
    epochs: int = 10
    learning_rate: float = 1e-3
    retain_fraction: float = 0.3
    alpha: float = 2.0
    seed: int = 0
    batch_size: int = 32
    weight_decay: float = 5e-4
    activation: str = "gumbel"
    mode: str = INSTANCE

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if not 0.0 < self.retain_fraction <= 1.0:
            raise InvalidInputError("retain_fraction must lie in (0, 1]")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        ScheduleConfig(self.alpha, self.mode)

    def to_dict(self):
        return asdict(self)


@dataclass
class RunResult:
    student: object
    trajectory: list = field(default_factory=list)  # (AccuracySnapshot, tau) per epoch
    wall_time: float = 0.0
    final_snapshot: AccuracySnapshot | None = None
    retain_ids: np.ndarray | None = None


def cross_entropy(targets, logits):
    """Per-row soft-target cross-entropy ``-sum_i t_i log softmax(z)_i``."""
    return -np.sum(targets * gumbel.log_softmax(np.atleast_2d(logits)), axis=-1)


def lotus_targets(teacher_logits, unlearn_label, tau, noise, activation="gumbel"):
    """Teacher targets: perturbed+tempered for forget rows, sharpened for retain rows."""
    teacher_logits = np.atleast_2d(teacher_logits)
    l = np.broadcast_to(np.asarray(unlearn_label), teacher_logits.shape[:1])
    out = np.empty_like(teacher_logits)
    f = l == 1
    if f.any():
        g = None if activation == "softmax" else np.atleast_2d(noise)[f]
        out[f] = gumbel.gumbel_softmax(teacher_logits[f], g, tau)
    if (~f).any():
        out[~f] = gumbel.sharpen(teacher_logits[~f])
    return out


def lotus_loss(teacher_logits, student_logits, unlearn_label, tau, noise):
    """Distillation loss of one sample (or the per-row losses of a batch).

    Minimised when the student's softmax matches the perturbed teacher target.
    """
    single = np.ndim(student_logits) == 1
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    if t.shape != s.shape:
        raise InvalidInputError(f"teacher {t.shape} and student {s.shape} differ")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise NonFiniteError("non-finite logits in lotus_loss")
    noise = np.zeros_like(t) if noise is None else np.atleast_2d(noise)
    loss = cross_entropy(lotus_targets(t, unlearn_label, tau, noise), s)
    return float(loss[0]) if single else loss


def soft_target_step(net, state, x, targets, sign=None):
    """One AdamW step on weighted soft-target cross-entropy; returns the mean loss."""
    acts = forward_cache(net, x)
    logits = acts[-1]
    probs = gumbel.softmax(logits)
    delta = probs - targets
    loss = cross_entropy(targets, logits)
    if sign is not None:
        delta = delta * sign[:, None]
        loss = loss * sign
    adamw_step(net, backward(net, x, delta, acts=acts), state)
    return float(loss.mean())


def one_hot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _interleave(a, b):
    """a0, b0, a1, b1, ... followed by whatever is left of the longer list."""
    out = []
    for i in range(max(len(a), len(b))):
        if i < len(a):
            out.append(a[i])
        if i < len(b):
            out.append(b[i])
    return out


def train_classifier(net, samples, cfg, seed=0):
    """Plain cross-entropy training in place; checks ``cfg.accuracy_floor`` at the end."""
    rng = np.random.default_rng(seed)
    state = OptimizerState.for_net(
        net, learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    targets = one_hot(samples.y, net.n_classes)
    for _ in range(cfg.epochs):
        for idx in _batches(len(samples), cfg.batch_size, rng):
            soft_target_step(net, state, samples.x[idx], targets[idx])
    acc = accuracy(net, samples.x, samples.y)
    if acc < cfg.accuracy_floor:
        raise TrainingError(
            f"training accuracy {acc:.4f} below floor {cfg.accuracy_floor} after "
            f"{cfg.epochs} epochs",
            accuracy=acc,
        )
    return net


def _seeds(seed):
    """Independent child seeds: (retain subset, batch order, noise, extra-net init)."""
    return np.random.SeedSequence(seed).spawn(4)


def retain_subset(data, retain_fraction, seed):
    """The seeded, stratified retain subset every non-gold method of a run uses."""
    return stratified_subset(data.retain, retain_fraction, _seeds(seed)[0])


def _require_nonempty(data, *names):
    for name in names:
        if len(data.split(name)) == 0:
            raise InvalidInputError(f"{name} split is empty")


def run_lotus(f_orig, data, cfg, retain=None):
    """Unlearn ``data.forget`` from a copy of ``f_orig``; ``f_orig`` is left untouched.

    ``retain`` overrides the retain samples used for distillation; by default a
    stratified ``cfg.retain_fraction`` subset of ``data.retain`` is drawn once.
    """
    if cfg.method != "lotus":
        raise InvalidInputError("run_lotus needs cfg.method == 'lotus'")
    _require_nonempty(data, "forget")
    if cfg.mode == INSTANCE:
        _require_nonempty(data, "unseen")
    sched = ScheduleConfig(cfg.alpha, cfg.mode)
    s_subset, s_order, s_noise, _ = _seeds(cfg.seed)
    if retain is None:
        retain = stratified_subset(data.retain, cfg.retain_fraction, s_subset)
    order_rng = np.random.default_rng(s_order)
    noise_rng = np.random.default_rng(s_noise)

    t0 = time.perf_counter()
    student = f_orig.copy()
    state = OptimizerState.for_net(
        student, learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    forget = data.forget
    k = f_orig.n_classes
    acc_unseen = (
        accuracy(f_orig, data.unseen.x, data.unseen.y) if cfg.mode == INSTANCE else 0.0
    )
    teacher_forget = forward(f_orig, forget.x)
    retain_targets = (
        gumbel.sharpen(forward(f_orig, retain.x)) if len(retain) else np.zeros((0, k))
    )

    trajectory = []
    for epoch in range(cfg.epochs):
        snap = AccuracySnapshot(accuracy(student, forget.x, forget.y), acc_unseen, epoch)
        tau = tau_d(snap, sched)
        trajectory.append((snap, tau))
        fb = _batches(len(forget), cfg.batch_size, order_rng)
        rb = _batches(len(retain), cfg.batch_size, order_rng) if len(retain) else []
        for kind, idx in _interleave([("f", i) for i in fb], [("r", i) for i in rb]):
            if kind == "f":
                if cfg.activation == "gumbel":
                    g = gumbel.sample_gumbel(k, noise_rng, n=len(idx))
                    targets = gumbel.gumbel_softmax(teacher_forget[idx], g, tau)
                else:
                    targets = gumbel.softmax_temperature(teacher_forget[idx], tau)
                soft_target_step(student, state, forget.x[idx], targets)
            else:
                soft_target_step(student, state, retain.x[idx], retain_targets[idx])
    wall = time.perf_counter() - t0
    final = AccuracySnapshot(accuracy(student, forget.x, forget.y), acc_unseen, cfg.epochs)
    return RunResult(student, trajectory, wall, final, retain.ids)


def random_incorrect_labels(y, k, rng):
    """Uniform draw from the k-1 classes other than each true label."""
    y = np.asarray(y)
    return (y + rng.integers(1, k, size=len(y))) % k


def run_baseline(f_orig, data, cfg, train_cfg=None, retain=None):
    """Gold retraining or one of the simple baselines; ``f_orig`` is left untouched.

    ``train_cfg`` (from-scratch settings) is only used by ``gold``.
    """
    method = cfg.method
    if method == "lotus" or method not in METHODS:
        raise InvalidInputError(f"run_baseline cannot run method {method!r}")
    s_subset, s_order, s_noise, s_init = _seeds(cfg.seed)
    k = f_orig.n_classes
    forget = data.forget

    if method == "gold":
        train_cfg = train_cfg or TrainConfig()
        t0 = time.perf_counter()
        student = init_net(f_orig.layer_dims, seed=s_init)
        student.seed = None
        train_classifier(student, data.retain, train_cfg, seed=s_order)
        wall = time.perf_counter() - t0
        return RunResult(student, [], wall, _final(student, data, f_orig), data.retain.ids)

    if retain is None:
        retain = stratified_subset(data.retain, cfg.retain_fraction, s_subset)
    order_rng = np.random.default_rng(s_order)
    noise_rng = np.random.default_rng(s_noise)
    t0 = time.perf_counter()
    student = f_orig.copy()
    state = OptimizerState.for_net(
        student, learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    retain_t = one_hot(retain.y, k)
    forget_t = one_hot(forget.y, k)
    bad_t = None
    if method == "bad_teacher":
        bad = init_net(f_orig.layer_dims, seed=s_init)
        retain_t = gumbel.softmax(forward(f_orig, retain.x))
        bad_t = gumbel.softmax(forward(bad, forget.x)) if len(forget) else forget_t

    # concatenated pool; forget rows carry flag 1
    pool_x = np.concatenate([retain.x, forget.x])
    is_forget = np.concatenate([np.zeros(len(retain), bool), np.ones(len(forget), bool)])
    for _ in range(cfg.epochs):
        if method == "finetune":
            targets = retain_t
            x = retain.x
            sign = None
        else:
            if method == "random_label":
                ft = one_hot(random_incorrect_labels(forget.y, k, noise_rng), k)
            elif method == "bad_teacher":
                ft = bad_t
            else:
                ft = forget_t
            targets = np.concatenate([retain_t, ft])
            x = pool_x
            sign = np.where(is_forget, -1.0, 1.0) if method == "neggrad_plus" else None
        for idx in _batches(len(x), cfg.batch_size, order_rng):
            soft_target_step(
                student, state, x[idx], targets[idx], None if sign is None else sign[idx]
            )
    wall = time.perf_counter() - t0
    return RunResult(student, [], wall, _final(student, data, f_orig), retain.ids)


def _final(student, data, f_orig):
    if len(data.forget) == 0 or len(data.unseen) == 0:
        return None
    return AccuracySnapshot(
        accuracy(student, data.forget.x, data.forget.y),
        accuracy(f_orig, data.unseen.x, data.unseen.y),
    )


def run_method(f_orig, data, cfg, train_cfg=None, retain=None):
    if cfg.method == "lotus":
        return run_lotus(f_orig, data, cfg, retain=retain)
    return run_baseline(f_orig, data, cfg, train_cfg=train_cfg, retain=retain)
