import csv
import math

import numpy as np
import pytest

from stochgrad.data import Dataset, split, synth_gaussian_clusters
from stochgrad.mathcore import RngStream
from stochgrad.network import GATER_PARAMS, init_network
from stochgrad.training import (
    REPORT_COLUMNS,
    OptimizerConfig,
    TrainConfig,
    Trainer,
    TrainingDivergence,
    TrainReport,
    evaluate,
    max_norm_project,
    sgd_momentum_step,
)


def test_plain_sgd_step():
    cfg = OptimizerConfig(lr_main=0.1, momentum=0.0)
    p, v = sgd_momentum_step({"b": np.array([0.0])}, {"b": np.array([1.0])}, {}, cfg)
    np.testing.assert_allclose(p["b"], [-0.1])


def test_momentum_second_step_is_1_9_times_first():
    cfg = OptimizerConfig(lr_main=0.1, momentum=0.9)
    g = {"b": np.array([1.0])}
    p0 = {"b": np.array([0.0])}
    p1, v = sgd_momentum_step(p0, g, {}, cfg)
    p2, _ = sgd_momentum_step(p1, g, v, cfg)
    assert (p2["b"] - p1["b"])[0] == pytest.approx(1.9 * (p1["b"] - p0["b"])[0], rel=1e-14)


def test_zero_gradient_coasts_on_velocity():
    cfg = OptimizerConfig(lr_main=0.1, momentum=0.5)
    p, v = sgd_momentum_step({"b": np.array([1.0])}, {"b": np.array([0.0])}, {"b": np.array([0.2])}, cfg)
    np.testing.assert_allclose(p["b"], [1.1])


def test_nonfinite_gradient_raises():
    with pytest.raises(TrainingDivergence):
        sgd_momentum_step({"b": np.zeros(1)}, {"b": np.array([np.nan])}, {}, OptimizerConfig())


def test_max_norm_examples():
    np.testing.assert_allclose(max_norm_project(np.array([[3.0], [4.0]]), 2.0), [[1.2], [1.6]])
    W = np.array([[1.0, 0.0], [1.0, 0.5]])
    np.testing.assert_array_equal(max_norm_project(W, 2.0), W)
    np.testing.assert_array_equal(max_norm_project(np.zeros((3, 2)), 2.0), np.zeros((3, 2)))


def test_max_norm_applied_to_weights_only():
    cfg = OptimizerConfig(lr_main=1.0, max_norm=2.0)
    params = {"out_W": np.zeros((2, 1)), "out_b": np.zeros(1)}
    grads = {"out_W": np.array([[-3.0], [-4.0]]), "out_b": np.array([-10.0])}
    p, _ = sgd_momentum_step(params, grads, {}, cfg)
    np.testing.assert_allclose(p["out_W"], [[1.2], [1.6]])
    np.testing.assert_allclose(p["out_b"], [10.0])


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(max_norm=0)
    with pytest.raises(ValueError):
        OptimizerConfig(momentum=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(lr_main=-1)


def test_per_kind_defaults():
    assert OptimizerConfig.for_kind("sbn").lr_gater == 0.001
    assert OptimizerConfig.for_kind("sbn").momentum == 0.0
    assert OptimizerConfig.for_kind("sts").momentum == 0.9
    assert OptimizerConfig.for_kind("st").lr_gater == 0.1
    assert OptimizerConfig.for_kind("sts", momentum=0.5).momentum == 0.5


def test_penalty_kind_consistency():
    with pytest.raises(ValueError):
        TrainConfig(penalty="kl").check(init_network(2, 1, 2, kind="noisy-rect").layer.kind)
    with pytest.raises(ValueError):
        TrainConfig(penalty="l1").check(init_network(2, 1, 2, kind="st").layer.kind)
    with pytest.raises(ValueError):
        TrainConfig(st_variant="fancy").check(init_network(2, 1, 2, kind="st").layer.kind)


def clusters(n=600, seed=0, d=10):
    return split(synth_gaussian_clusters(n, 4, d, separation=12.0, seed=seed), (0.7, 0.15, 0.15), seed=seed)


def make_trainer(kind="st", seed=0, d=10, N=40, M=8, classes=4, **train_kw):
    net = init_network(d, M, N, classes, kind, RngStream(seed))
    opt = OptimizerConfig.for_kind(kind, epochs=train_kw.pop("epochs", 5), **train_kw.pop("opt", {}))
    return Trainer(net, opt, TrainConfig(seed=seed, **train_kw))


def test_empty_dataset_gives_empty_row():
    tr = make_trainer()
    row = tr.train_epoch(Dataset(np.zeros((0, 10)), np.zeros(0, dtype=int)))
    assert row["epoch"] == 1 and row["train_loss"] is None and row["expert_macs_sparse"] == 0


def test_report_columns_and_blank_timing(tmp_path):
    train, valid, _ = clusters()
    rep = make_trainer(epochs=2).fit(train, valid)
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 3 and all(r[-1] == "" for r in rows[1:])


def test_record_timing_fills_wall_ms():
    train, _, _ = clusters()
    row = make_trainer(record_timing=True).train_epoch(train)
    assert row["wall_ms"] > 0


def test_report_requires_increasing_epochs():
    rep = TrainReport()
    rep.append({"epoch": 1})
    with pytest.raises(ValueError):
        rep.append({"epoch": 1})


@pytest.mark.parametrize("kind", ["st", "sbn", "sts", "noisy-rect", "sigmoid"])
def test_training_is_deterministic(kind):
    train, valid, _ = clusters()
    a = make_trainer(kind, epochs=2).fit(train, valid)
    b = make_trainer(kind, epochs=2).fit(train, valid)
    assert a.rows == b.rows


def test_zero_gater_rate_freezes_gater():
    train, _, _ = clusters()
    tr = make_trainer("st", opt={"lr_gater": 0.0}, revive=False)
    before = {k: tr.net.params()[k].copy() for k in GATER_PARAMS}
    after_expert = tr.net.params()["expert_W"].copy()
    tr.train_epoch(train)
    for k in GATER_PARAMS:
        assert tr.net.params()[k].tobytes() == before[k].tobytes()
    assert tr.net.params()["expert_W"].tobytes() != after_expert.tobytes()


def test_closed_gates_get_no_expert_gradient():
    tr = make_trainer("st")
    x = RngStream(1).uniform((6, 10))
    y = np.arange(6) % 4
    _, _, h, grads = tr.loss_and_grads(x, y, RngStream(2))
    dead = np.all(h == 0, axis=0)
    assert dead.any()
    assert not grads["expert_W"][:, dead].any() and not grads["expert_b"][dead].any()


def finite_difference(tr, x, y, name, idx, eps=1e-6):
    params = tr.net.params()
    base = params[name].copy()

    def loss(val):
        p = base.copy()
        p[idx] = val
        tr.net.set_params({name: p})
        out = tr.loss_and_grads(x, y, RngStream(0))[0]
        tr.net.set_params({name: base})
        return out

    return (loss(base[idx] + eps) - loss(base[idx] - eps)) / (2 * eps)


@pytest.mark.parametrize("name,idx", [("out_W", (3, 1)), ("out_b", (2,)), ("expert_W", (4, 7)),
                                      ("expert_b", (5,)), ("gater_W2", (2, 3)), ("gater_b2", (1,)),
                                      ("gater_W1", (0, 1)), ("gater_b1", (3,))])
def test_backward_matches_finite_differences_for_smooth_gates(name, idx):
    tr = make_trainer("sigmoid")
    x = RngStream(3).uniform((5, 10))
    y = np.array([0, 1, 2, 3, 1])
    _, _, _, grads = tr.loss_and_grads(x, y, RngStream(0))
    assert grads[name][idx] == pytest.approx(finite_difference(tr, x, y, name, idx), rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("name,idx", [("gater_W2", (2, 3)), ("gater_b2", (1,)), ("gater_W1", (0, 1))])
def test_kl_penalty_gradient_matches_finite_differences(name, idx):
    # sigmoid gates with an explicit KL penalty: task loss plus penalty is smooth
    tr = make_trainer("sigmoid", penalty="kl", lambda0=0.7)
    x = RngStream(3).uniform((5, 10))
    y = np.array([0, 1, 2, 3, 1])

    def total(val):
        p = base.copy()
        p[idx] = val
        tr.net.set_params({name: p})
        ce, pen, _, _ = tr.loss_and_grads(x, y, RngStream(0))
        tr.net.set_params({name: base})
        return ce + pen.value

    base = tr.net.params()[name].copy()
    _, _, _, grads = tr.loss_and_grads(x, y, RngStream(0))
    eps = 1e-6
    fd = (total(base[idx] + eps) - total(base[idx] - eps)) / (2 * eps)
    assert grads[name][idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_loss_decreases_on_convex_toy():
    train, _, _ = clusters()
    tr = make_trainer("sigmoid", opt={"lr_main": 0.05}, epochs=1)
    losses = [tr.train_epoch(train)["train_loss"] for _ in range(6)]
    assert losses[-1] < losses[0]


def test_sigmoid_baseline_separates_clusters():
    ds = synth_gaussian_clusters(1500, 5, 20, separation=10.0, seed=4)
    train, valid, test = split(ds, (0.7, 0.15, 0.15), seed=4)
    tr = make_trainer("sigmoid", d=20, classes=5, epochs=60, patience=60)
    tr.fit(train, valid)
    assert evaluate(tr.net, test).error_rate <= 0.01
    assert evaluate(tr.net, train).error_rate == 0.0


def test_majority_class_error():
    net = init_network(3, 2, 4, classes=10, kind="sigmoid", rng=RngStream(0))
    net.out_W[:] = 0.0
    net.out_b[:] = 0.0
    net.out_b[0] = 5.0
    ds = Dataset(RngStream(1).uniform((100, 3)), np.arange(100) % 10)
    res = evaluate(net, ds)
    assert res.error_rate == pytest.approx(0.9)
    assert res.s_e == 1.0


def test_evaluate_empty():
    net = init_network(3, 2, 4, rng=RngStream(0))
    res = evaluate(net, Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int)))
    assert math.isnan(res.error_rate) and res.macs.expert_macs_dense == 0


def test_sbn_updates_baseline():
    train, _, _ = clusters()
    tr = make_trainer("sbn")
    assert not tr.baseline_state.denominator_avg.any()
    tr.train_epoch(train)
    assert tr.baseline_state.baseline().std() > 0


def test_sbn_without_baseline_keeps_state():
    train, _, _ = clusters()
    tr = make_trainer("sbn", baseline="none")
    tr.train_epoch(train)
    assert not tr.baseline_state.denominator_avg.any()


def test_adaptive_lambda_holds_band():
    train, valid, _ = clusters(n=1200)
    tr = make_trainer("st", N=100, adapt=True, epochs=12)
    rep = tr.fit(train, valid)
    assert abs(rep.rows[-1]["s_e"] - 0.1) <= 0.01


def test_early_stopping_restores_best():
    train, valid, _ = clusters()
    tr = make_trainer("sigmoid", epochs=30, patience=2)
    rep = tr.fit(train, valid)
    best = min(r["valid_error"] for r in rep.rows)
    assert evaluate(tr.net, valid).error_rate == best
    assert len(rep.rows) < 30 or rep.rows[-1]["valid_error"] == best
