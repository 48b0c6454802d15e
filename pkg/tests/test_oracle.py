import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochgrad.mathcore import sigm
from stochgrad.oracle import (
    EnumerableProblem,
    EnumerationError,
    centered_estimator,
    configuration_probs,
    exact_estimator_moments,
    exact_expected_loss,
    exact_grad,
    finite_diff_grad,
    mc_estimator_stats,
    random_smooth_problem,
    reinforce_estimator,
)


def test_expected_loss_examples():
    assert exact_expected_loss(EnumerableProblem(loss=lambda h: (h[0] - 1) ** 2, a=[0.0])) == 0.5
    assert exact_expected_loss(EnumerableProblem(loss=lambda h: 4.2, a=[1.3])) == pytest.approx(4.2)
    two = EnumerableProblem(loss=lambda h: h[0] + h[1], a=[0.0, 2.0])
    assert exact_expected_loss(two) == pytest.approx(1.380797077977882, abs=1e-12)


def test_exact_grad_examples():
    assert exact_grad(EnumerableProblem(loss=lambda h: (h[0] - 1) ** 2, a=[0.0]), 0) == -0.25
    independent = EnumerableProblem(loss=lambda h: 3.0 * h[1], a=[0.5, -0.2])
    assert exact_grad(independent, 0) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_exact_grad_matches_finite_difference(k, seed):
    prob = random_smooth_problem(np.random.default_rng(seed), k)
    for i in range(k):
        fd = finite_diff_grad(lambda a: exact_expected_loss(prob.with_activations(a)), prob.a, i)
        assert exact_grad(prob, i) == pytest.approx(fd, abs=1e-8)


@pytest.mark.parametrize("k", [1, 3, 6])
def test_probabilities_sum_to_one(k):
    a = np.random.default_rng(k).normal(size=k) * 3
    assert configuration_probs(a).sum() == pytest.approx(1.0, abs=1e-12)


def test_enumeration_cap():
    with pytest.raises(EnumerationError):
        EnumerableProblem(loss=lambda h: 0.0, a=np.zeros(21))


def test_activation_map():
    prob = EnumerableProblem(loss=lambda h: h[0], activation_map=lambda th: np.array([th[0] * 2]), theta=[0.5])
    assert prob.a[0] == 1.0
    assert exact_expected_loss(prob) == pytest.approx(sigm(1.0))


def test_finite_diff_examples():
    assert finite_diff_grad(lambda t: t[0] ** 2, [3.0], 0) == pytest.approx(6.0, abs=1e-6)
    assert finite_diff_grad(lambda t: 2.5 * t[0] - 1, [0.0], 0) == pytest.approx(2.5, abs=1e-9)
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda t: np.inf, [0.0], 0)


def test_mc_reinforce_quadratic():
    prob = EnumerableProblem(loss=lambda h: (h[0] - 1) ** 2, a=[0.0])
    s = mc_estimator_stats(reinforce_estimator(), prob, 0, 1_000_000)
    assert abs(s.mean - exact_grad(prob, 0)) < 4 * s.standard_error
    assert s.standard_error == pytest.approx(np.sqrt(s.variance / s.n))


def test_centered_variance_below_uncentered():
    prob = EnumerableProblem(loss=lambda h: h[0], a=[0.0])
    _, v0 = exact_estimator_moments(reinforce_estimator(), prob, 0)
    _, v1 = exact_estimator_moments(centered_estimator(0.5), prob, 0)
    assert v1 < v0
    assert v1 == pytest.approx(0.0, abs=1e-15)


def test_constant_loss_zero_variance_mc():
    prob = EnumerableProblem(loss=lambda h: 3.0, a=[0.7])
    assert mc_estimator_stats(centered_estimator(3.0), prob, 0, 10_000).variance == 0.0


def test_standard_error_rate():
    prob = EnumerableProblem(loss=lambda h: (h[0] - 0.3) ** 2 + h[0], a=[0.4])
    s1 = mc_estimator_stats(reinforce_estimator(), prob, 0, 40_000, seed=3)
    s4 = mc_estimator_stats(reinforce_estimator(), prob, 0, 160_000, seed=4)
    assert s4.standard_error / s1.standard_error == pytest.approx(0.5, rel=0.2)


def test_mc_reproducible():
    prob = random_smooth_problem(np.random.default_rng(1), 2)
    assert mc_estimator_stats(reinforce_estimator(), prob, 1, 5000, seed=9) == \
        mc_estimator_stats(reinforce_estimator(), prob, 1, 5000, seed=9)
