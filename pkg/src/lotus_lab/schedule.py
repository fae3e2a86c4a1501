"""Accuracy-driven temperature for the forget branch.

The temperature grows above 1 while the student is still more accurate on the
forget set than the frozen teacher is on unseen data, and drops below 1 once
the student overshoots.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .files import atomic_write_text
from .nn import forward

INSTANCE = "instance"
CLASS = "class"


@dataclass(frozen=True)
class ScheduleConfig:
    alpha: float = 2.0
    mode: str = INSTANCE

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInputError(f"alpha must be > 0, got {self.alpha}")
        if self.mode not in (INSTANCE, CLASS):
            raise InvalidInputError(f"unknown schedule mode {self.mode!r}")


@dataclass(frozen=True)
class AccuracySnapshot:
    acc_forget_student: float
    acc_unseen_teacher: float
    epoch: int = 0

    def __post_init__(self):
        for name in ("acc_forget_student", "acc_unseen_teacher"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name}={value} outside [0, 1]")

    @property
    def delta_acc(self):
        return self.acc_forget_student - self.acc_unseen_teacher


def predict(net, x):
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(forward(net, np.atleast_2d(x)), axis=1)


def accuracy(net, x, y):
    y = np.asarray(y)
    if y.size == 0:
        raise InvalidInputError("accuracy of an empty split is undefined")
    return float(np.mean(predict(net, x) == y))


def tau_d(snapshot, cfg):
    if cfg.mode == CLASS:
        # class unlearning targets zero forget accuracy, so no unseen term
        return math.exp(cfg.alpha * snapshot.acc_forget_student)
    return math.exp(cfg.alpha * snapshot.delta_acc)


TRAJECTORY_COLUMNS = ("epoch", "acc_forget", "acc_unseen", "delta_acc", "tau_d")


def trajectory_csv(rows):
    """Render ``(snapshot, tau)`` pairs with the fixed trajectory columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for snap, tau in rows:
        writer.writerow(
            [snap.epoch, repr(snap.acc_forget_student), repr(snap.acc_unseen_teacher),
             repr(snap.delta_acc), repr(tau)]
        )
    return buf.getvalue()


def write_trajectory(path, rows):
    atomic_write_text(path, trajectory_csv(rows))


def read_trajectory(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in reader
        ]
