import math

import numpy as np
import pytest

from lotus_lab import gumbel
from lotus_lab.data import Samples, SplitDataset, SplitSpec, generate_blobs, make_splits
from lotus_lab.errors import InvalidInputError, NonFiniteError, TrainingError
from lotus_lab.nn import OptimizerState, forward, init_net
from lotus_lab.schedule import accuracy
from lotus_lab.unlearn import (
    TrainConfig,
    UnlearnConfig,
    _seeds,
    cross_entropy,
    lotus_loss,
    lotus_targets,
    one_hot,
    random_incorrect_labels,
    retain_subset,
    run_baseline,
    run_lotus,
    run_method,
    soft_target_step,
    train_classifier,
)

DIMS = [4, 10, 3]


@pytest.fixture(scope="module")
def world():
    s, _ = generate_blobs(3, 60, 4, 0.6, seed=1)
    data = make_splits(s, SplitSpec(seed=1))
    net = train_classifier(init_net(DIMS, seed=2), data.train, TrainConfig(epochs=30), seed=3)
    return data, net


def _empty(dim):
    return Samples(np.zeros(0, np.int64), np.zeros((0, dim)), np.zeros(0, np.int64))


def test_loss_two_class_zero_logits():
    assert lotus_loss([0.0, 0.0], [0.0, 0.0], 1, 1.0, [0.0, 0.0]) == pytest.approx(math.log(2))


def test_loss_at_unit_temperature_is_cross_entropy(rng):
    for _ in range(50):
        t, s = rng.normal(size=5), rng.normal(size=5)
        p = np.exp(t - t.max())
        p /= p.sum()
        q = np.exp(s - s.max())
        q /= q.sum()
        want = -sum(a * math.log(b) for a, b in zip(p, q))
        assert lotus_loss(t, s, 1, 1.0, np.zeros(5)) == pytest.approx(want, abs=1e-12)


def test_retain_loss_minimised_at_teacher(rng):
    t = rng.normal(size=4)
    at_teacher = lotus_loss(t, t * 1e3, 0, 1.0, None)
    for _ in range(100):
        assert lotus_loss(t, t * 1e3 + rng.normal(size=4) * 50, 0, 1.0, None) >= at_teacher - 1e-9


def test_loss_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        lotus_loss([np.nan, 0.0], [0.0, 0.0], 1, 1.0, None)
    with pytest.raises(NonFiniteError):
        lotus_loss([0.0, 0.0], [np.inf, 0.0], 0, 1.0, None)
    with pytest.raises(InvalidInputError):
        lotus_loss([0.0, 0.0], [0.0, 0.0, 0.0], 0, 1.0, None)


def test_targets_without_forget_rows_are_sharpened(rng):
    z = rng.normal(size=(6, 3))
    out = lotus_targets(z, np.zeros(6, int), 3.0, rng.normal(size=(6, 3)))
    assert np.array_equal(out, gumbel.sharpen(z))
    assert lotus_loss(z, z, np.zeros(6, int), 3.0, None) == pytest.approx(
        cross_entropy(gumbel.sharpen(z), z))


def test_lotus_leaves_teacher_untouched(world):
    data, net = world
    before = net.copy()
    run_lotus(net, data, UnlearnConfig(epochs=3, seed=4))
    assert net.same_parameters(before)


def test_lotus_trajectory(world):
    data, net = world
    res = run_lotus(net, data, UnlearnConfig(epochs=4, seed=0))
    assert len(res.trajectory) == 4
    snap, tau = res.trajectory[0]
    # epoch 1 is measured on the untouched student, that is f_orig itself
    assert snap.acc_forget_student == accuracy(net, data.forget.x, data.forget.y)
    assert tau == pytest.approx(math.exp(2.0 * (snap.acc_forget_student - snap.acc_unseen_teacher)))
    if snap.acc_forget_student == snap.acc_unseen_teacher:
        assert tau == 1.0


def test_lotus_zero_delta_starts_at_unit_temperature(world):
    data, net = world
    # make the unseen split a copy of forget so both accuracies coincide
    twin = SplitDataset(data.forget, data.retain, data.forget, data.test, data.k)
    res = run_lotus(net, twin, UnlearnConfig(epochs=1))
    assert res.trajectory[0][1] == 1.0


def test_lotus_rejects_empty_splits(world):
    data, net = world
    for name in ("forget", "unseen"):
        parts = {n: data.split(n) for n in ("forget", "retain", "unseen", "test")}
        parts[name] = _empty(4)
        with pytest.raises(InvalidInputError, match=name):
            run_lotus(net, SplitDataset(k=3, **parts), UnlearnConfig(epochs=1))


def test_lotus_deterministic(world):
    data, net = world
    a = run_lotus(net, data, UnlearnConfig(epochs=2, seed=9))
    b = run_lotus(net, data, UnlearnConfig(epochs=2, seed=9))
    c = run_lotus(net, data, UnlearnConfig(epochs=2, seed=10))
    assert a.student.same_parameters(b.student)
    assert not a.student.same_parameters(c.student)


def test_random_labels_never_true():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 5, size=100_000)
    r = random_incorrect_labels(y, 5, rng)
    assert not np.any(r == y)
    assert set(np.unique(r)) == set(range(5))


def test_ascent_step_mirrors_descent_step(rng):
    net = init_net([3, 5, 2], seed=0)
    x = rng.normal(size=(1, 3))
    t = one_hot([1], 2)
    up, down = net.copy(), net.copy()
    soft_target_step(down, OptimizerState.for_net(down, weight_decay=0.0), x, t)
    soft_target_step(up, OptimizerState.for_net(up, weight_decay=0.0), x, t, sign=np.array([-1.0]))
    for p0, pu, pd in zip(net.parameters(), up.parameters(), down.parameters()):
        assert np.allclose(pu - p0, -(pd - p0), atol=1e-15)
    assert np.any(down.weights[0] != net.weights[0])


def test_gold_with_empty_forget_is_full_training(world):
    data, net = world
    parts = dict(forget=_empty(4), retain=data.train, unseen=data.unseen, test=data.test)
    cfg = TrainConfig(epochs=5)
    gold = run_baseline(net, SplitDataset(k=3, **parts), UnlearnConfig("gold", seed=7), cfg)
    _, s_order, _, s_init = _seeds(7)
    ref = train_classifier(init_net(DIMS, seed=s_init), data.train, cfg, seed=s_order)
    assert gold.student.same_parameters(ref)
    assert gold.final_snapshot is None


def test_baselines_leave_teacher_untouched_and_move_student(world):
    data, net = world
    before = net.copy()
    for m in ("finetune", "neggrad_plus", "random_label", "bad_teacher"):
        res = run_method(net, data, UnlearnConfig(m, epochs=2, seed=1))
        assert net.same_parameters(before)
        assert not res.student.same_parameters(net)
        assert len(res.retain_ids) == len(retain_subset(data, 0.3, 1))


def test_bad_teacher_random_net_is_seeded(world):
    data, net = world
    a = run_baseline(net, data, UnlearnConfig("bad_teacher", epochs=1, seed=3))
    b = run_baseline(net, data, UnlearnConfig("bad_teacher", epochs=1, seed=3))
    assert a.student.same_parameters(b.student)
    bad = init_net(DIMS, seed=_seeds(3)[3])
    assert not bad.same_parameters(net)
    assert np.allclose(gumbel.softmax(forward(bad, data.forget.x)).sum(1), 1.0)


def test_retain_subset_is_stratified(world):
    data, _ = world
    sub = retain_subset(data, 0.3, 5)
    for c in range(3):
        n_c = int(np.sum(data.retain.y == c))
        assert int(np.sum(sub.y == c)) == max(1, round(n_c * 0.3))
    assert set(sub.ids) <= set(data.retain.ids)
    assert np.array_equal(sub.ids, retain_subset(data, 0.3, 5).ids)


def test_unknown_method_and_settings_rejected(world):
    data, net = world
    with pytest.raises(InvalidInputError):
        UnlearnConfig("erase_everything")
    with pytest.raises(InvalidInputError):
        UnlearnConfig(epochs=0)
    with pytest.raises(InvalidInputError):
        UnlearnConfig(activation="relu")
    with pytest.raises(InvalidInputError):
        run_baseline(net, data, UnlearnConfig("lotus"))
    with pytest.raises(InvalidInputError):
        run_lotus(net, data, UnlearnConfig("finetune"))


def test_training_floor_reports_accuracy(world):
    data, _ = world
    with pytest.raises(TrainingError) as err:
        train_classifier(init_net(DIMS), data.train, TrainConfig(epochs=1, accuracy_floor=1.01))
    assert 0.0 <= err.value.accuracy <= 1.0
