import numpy as np
import pytest

from stochgrad.estimators import (
    EstimatorState,
    centered_reinforce_grad,
    noisy_rectifier_backward,
    reinforce_grad,
    straight_through_backward,
    sts_backward,
    update_baseline,
)
from stochgrad.mathcore import RngStream, sigm
from stochgrad.oracle import (
    EnumerableProblem,
    centered_estimator,
    exact_estimator_moments,
    exact_grad,
    mc_estimator_stats,
    optimal_baseline,
    reinforce_estimator,
)
from stochgrad.units import noisy_rectifier_forward, sts_forward


def test_reinforce_arithmetic():
    assert reinforce_grad(1, 2.0, 3.0) == pytest.approx(0.357608766066352668, abs=1e-15)
    assert reinforce_grad(0, -1.3, 0.0) == 0.0


def quadratic_problem(a=0.0):
    return EnumerableProblem(loss=lambda h: float((h[0] - 1.0) ** 2), a=[a])


def test_reinforce_quadratic_unbiased():
    prob = quadratic_problem()
    assert exact_grad(prob, 0) == pytest.approx(-0.25, abs=1e-15)
    mean, _ = exact_estimator_moments(reinforce_estimator(), prob, 0)
    assert mean == pytest.approx(-0.25, abs=1e-12)
    stats = mc_estimator_stats(reinforce_estimator(), prob, 0, 1_000_000, seed=1)
    assert abs(stats.mean + 0.25) < 4 * stats.standard_error


def test_centered_arithmetic():
    assert centered_reinforce_grad(0, 0.0, 2.0, baseline=0.5) == pytest.approx(-0.75)


def test_optimal_baseline_linear_loss():
    # numerator p(1-p)^2, denominator p(1-p)
    prob = EnumerableProblem(loss=lambda h: float(h[0]), a=[0.0])
    assert optimal_baseline(prob, 0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("baseline", [-3.0, 0.0, 0.7, 10.0])
def test_centering_preserves_mean(baseline):
    prob = EnumerableProblem(loss=lambda h: float(np.sin(3 * h[0]) + 2 * h[0] * h[1]), a=[0.4, -1.1])
    base, _ = exact_estimator_moments(reinforce_estimator(), prob, 0)
    cen, _ = exact_estimator_moments(centered_estimator(baseline), prob, 0)
    assert cen == pytest.approx(base, abs=1e-12)


def test_cold_start_baseline_is_zero():
    state = EstimatorState.zeros()
    assert state.baseline() == 0.0
    assert centered_reinforce_grad(1, 0.0, 2.0, state) == reinforce_grad(1, 0.0, 2.0)


def test_update_baseline_single_sample():
    state = update_baseline(EstimatorState.zeros(decay=1.0), 1, 0.0, 4.0)
    assert state.baseline() == pytest.approx(4.0)
    assert state.count == 1


def test_baseline_converges_on_stationary_stream():
    rng = RngStream(4)
    state = EstimatorState.zeros(decay=0.01)
    h = (rng.uniform(10_000) < 0.5).astype(float)
    for hk in h:
        state = update_baseline(state, hk, 0.0, hk)
    assert abs(state.baseline() - 0.5) < 0.05


def test_constant_loss_gives_zero_centered_estimate():
    rng = RngStream(6)
    state = EstimatorState.zeros(decay=0.05)
    for hk in (rng.uniform(500) < 0.3):
        state = update_baseline(state, float(hk), -0.8, 2.5)
    assert state.baseline() == pytest.approx(2.5, abs=1e-12)
    prob = EnumerableProblem(loss=lambda h: 2.5, a=[-0.8])
    _, var = exact_estimator_moments(centered_estimator(2.5), prob, 0)
    assert var == 0.0


def test_batched_baseline_update_matches_means():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = np.array([[0.0, 1.0], [0.5, -1.0], [2.0, 0.0]])
    L = np.array([1.0, 2.0, 3.0])
    state = update_baseline(EstimatorState.zeros(2, decay=1.0), h, a, L)
    w = (h - sigm(a)) ** 2
    np.testing.assert_allclose(state.baseline(), (w * L[:, None]).mean(0) / w.mean(0))


def test_straight_through_variants():
    assert straight_through_backward(0.3, 5.0, "plain") == 0.3
    assert straight_through_backward(0.3, 0.0, "sigmoid-deriv") == pytest.approx(0.075)
    assert straight_through_backward(0.0, 1.0, "plain") == 0.0
    assert straight_through_backward(0.0, 1.0, "sigmoid-deriv") == 0.0
    with pytest.raises(ValueError):
        straight_through_backward(1.0, 0.0, "other")


def test_sts_backward_values():
    act = sts_forward(0.0, u=0.99)
    assert act.b == 0.0
    assert sts_backward(7.0, act) == 0.0
    act = sts_forward(0.0, u=0.1)
    assert sts_backward(1.0, act) == pytest.approx(0.1767766952966369, abs=1e-15)


@pytest.mark.parametrize("a", [-3.0, -0.5, 0.0, 1.7])
def test_sts_backward_finite_difference(a):
    u = 1e-3  # draw that keeps b = 1 for every a in the grid
    act = sts_forward(a, u=u)
    assert act.b == 1.0
    eps = 1e-5
    fd = (sts_forward(a + eps, u=u).h - sts_forward(a - eps, u=u).h) / (2 * eps)
    assert sts_backward(1.0, act) == pytest.approx(fd, abs=1e-6)


def test_noisy_rectifier_backward():
    assert noisy_rectifier_backward(3.0, noisy_rectifier_forward(0.0, z=-1.0)) == 0.0
    assert noisy_rectifier_backward(2.0, noisy_rectifier_forward(0.2, z=0.3)) == 2.0


def test_noisy_rectifier_backward_finite_difference():
    z = 0.4
    a = 0.3
    eps = 1e-5
    fd = (noisy_rectifier_forward(a + eps, z=z).h - noisy_rectifier_forward(a - eps, z=z).h) / (2 * eps)
    assert noisy_rectifier_backward(1.0, noisy_rectifier_forward(a, z=z)) == pytest.approx(fd, abs=1e-8)
