"""Exact enumeration, finite differences and Monte Carlo measurement of estimators.

An *estimator* throughout this module is any callable
``estimator(h_i, a_i, L, dL_dh_i)`` returning the per-sample estimate of
``dE[L]/da_i``; all arguments broadcast as numpy arrays. ``dL_dh_i`` is
``None`` when the problem carries no loss gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .estimators import centered_reinforce_grad, reinforce_grad, straight_through_backward
from .mathcore import RngStream, dsigm, sigm, softplus, stream_id

MAX_UNITS = 20


class EnumerationError(ValueError):
    pass


@dataclass
class EnumerableProblem:
    """``k`` independent stochastic binary units feeding a deterministic loss.

    Either give the pre-activations ``a`` directly or an ``activation_map``
    with parameters ``theta``. ``loss`` maps a length-``k`` configuration to
    a float; ``loss_grad`` (optional) returns ``dL/dh`` at a configuration,
    which the straight-through estimator needs.
    """

    loss: Callable[[np.ndarray], float]
    a: Optional[np.ndarray] = None
    activation_map: Optional[Callable[[np.ndarray], np.ndarray]] = None
    theta: Optional[np.ndarray] = None
    loss_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.a is None:
            if self.activation_map is None:
                raise ValueError("need either a or activation_map")
            self.a = self.activation_map(np.asarray(self.theta, dtype=np.float64))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if self.k > MAX_UNITS:
            raise EnumerationError(f"{self.k} units exceeds the enumeration cap of {MAX_UNITS}")

    @property
    def k(self) -> int:
        return self.a.shape[0]

    def with_activations(self, a) -> "EnumerableProblem":
        return EnumerableProblem(loss=self.loss, a=np.asarray(a, dtype=np.float64),
                                 loss_grad=self.loss_grad)


class EstimatorStats(NamedTuple):
    mean: float
    variance: float
    standard_error: float
    n: int


def configurations(k: int) -> np.ndarray:
    """All ``2**k`` binary configurations; row ``j`` has bit ``i`` of ``j`` in column ``i``."""
    if k > MAX_UNITS:
        raise EnumerationError(f"{k} units exceeds the enumeration cap of {MAX_UNITS}")
    idx = np.arange(2**k)[:, None]
    return ((idx >> np.arange(k)) & 1).astype(np.float64)


def configuration_probs(a) -> np.ndarray:
    p = sigm(np.atleast_1d(a))
    H = configurations(p.shape[0])
    return np.prod(np.where(H == 1, p, 1.0 - p), axis=1)


def loss_table(problem: EnumerableProblem) -> np.ndarray:
    return np.array([problem.loss(h) for h in configurations(problem.k)], dtype=np.float64)


def grad_table(problem: EnumerableProblem) -> Optional[np.ndarray]:
    if problem.loss_grad is None:
        return None
    return np.array([problem.loss_grad(h) for h in configurations(problem.k)], dtype=np.float64)


def exact_expected_loss(problem: EnumerableProblem) -> float:
    return float(np.dot(configuration_probs(problem.a), loss_table(problem)))


def exact_grad(problem: EnumerableProblem, i: int) -> float:
    """``sigm'(a_i) * E_{h_-i}[L(h_i=1, h_-i) - L(h_i=0, h_-i)]``."""
    H = configurations(problem.k)
    L = loss_table(problem)
    p = sigm(problem.a)
    others = np.prod(np.where(H == 1, p, 1.0 - p)[:, np.arange(problem.k) != i], axis=1)
    on = H[:, i] == 1
    # rows with bit i cleared pair with the row ``j | (1 << i)``
    off_rows = np.flatnonzero(~on)
    diff = L[off_rows | (1 << i)] - L[off_rows]
    return float(dsigm(problem.a[i]) * np.dot(others[off_rows], diff))


def exact_estimator_moments(estimator, problem: EnumerableProblem, i: int) -> tuple[float, float]:
    """Exact mean and variance of an estimator by summing over configurations."""
    H = configurations(problem.k)
    probs = configuration_probs(problem.a)
    L = loss_table(problem)
    G = grad_table(problem)
    g = None if G is None else G[:, i]
    values = np.asarray(estimator(H[:, i], problem.a[i], L, g), dtype=np.float64)
    mean = float(np.dot(probs, values))
    var = float(np.dot(probs, (values - mean) ** 2))
    return mean, var


def optimal_baseline(problem: EnumerableProblem, i: int) -> float:
    """``E[(h_i - p_i)^2 L] / E[(h_i - p_i)^2]`` evaluated exactly."""
    H = configurations(problem.k)
    probs = configuration_probs(problem.a)
    w = (H[:, i] - sigm(problem.a[i])) ** 2
    L = loss_table(problem)
    return float(np.dot(probs, w * L) / np.dot(probs, w))


def mc_estimator_stats(estimator, problem: EnumerableProblem, i: int, n: int,
                       seed: int = 0) -> EstimatorStats:
    """Mean, variance and standard error of an estimator from ``n`` fresh samples."""
    if n < 2:
        raise ValueError("need at least two samples")
    rng = RngStream(seed, stream_id(0xE5, problem.k, i))
    p = sigm(problem.a)
    U = rng.uniform((n, problem.k))
    H = (U < p).astype(np.float64)
    idx = (H.astype(np.int64) << np.arange(problem.k)).sum(axis=1)
    L = loss_table(problem)[idx]
    G = grad_table(problem)
    g = None if G is None else G[idx, i]
    values = np.asarray(estimator(H[:, i], problem.a[i], L, g), dtype=np.float64)
    mean = float(values.mean())
    var = float(values.var(ddof=1))
    return EstimatorStats(mean, var, math.sqrt(var / n), n)


def finite_diff_grad(f, theta, i: int, eps: float = 1e-5) -> float:
    """Central difference of ``f`` along coordinate ``i``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    up, down = theta.copy(), theta.copy()
    up[i] += eps
    down[i] -= eps
    fu, fd = float(f(up)), float(f(down))
    if not (math.isfinite(fu) and math.isfinite(fd)):
        raise FloatingPointError(f"non-finite function value at coordinate {i}")
    return (fu - fd) / (2.0 * eps)


# -- estimator adapters --------------------------------------------------------

def reinforce_estimator(bias: float = 0.0):
    def est(h, a, L, g):
        return reinforce_grad(h, a, L) + bias
    return est


def centered_estimator(baseline: float):
    def est(h, a, L, g):
        return centered_reinforce_grad(h, a, L, baseline=baseline)
    return est


def straight_through_estimator(variant: str = "plain"):
    def est(h, a, L, g):
        if g is None:
            raise ValueError("straight-through needs a problem with loss_grad")
        return straight_through_backward(g, a, variant) * np.ones_like(h)
    return est


# -- random test problems ----------------------------------------------------------

def _readout_loss(kind: str, v, c, y):
    """Smooth convex loss of a linear readout ``v . h + c`` against target ``y``."""
    if kind == "squared":
        def loss(h):
            return float((np.dot(v, h) + c - y) ** 2)

        def grad(h):
            return 2.0 * (np.dot(v, h) + c - y) * v
    else:
        def loss(h):
            r = np.dot(v, h) + c
            return float(softplus(r) - y * r)

        def grad(h):
            return (sigm(np.dot(v, h) + c) - y) * v
    return loss, grad


def random_smooth_problem(rng: np.random.Generator, k: int) -> EnumerableProblem:
    """Readout loss plus a sinusoidal interaction term over ``k`` units."""
    a = rng.uniform(-3.0, 3.0, size=k)
    v = rng.normal(0.0, 2.0, size=k)
    u = rng.normal(0.0, 1.0, size=k)
    c = float(rng.normal())
    y = float(rng.integers(0, 2))
    base, base_grad = _readout_loss("squared" if rng.random() < 0.5 else "logistic", v, c, y)

    def loss(h):
        return base(h) + 0.5 * math.sin(float(np.dot(u, h)))

    def grad(h):
        return base_grad(h) + 0.5 * math.cos(float(np.dot(u, h))) * u

    return EnumerableProblem(loss=loss, a=a, loss_grad=grad)


def random_single_layer_problem(rng: np.random.Generator) -> EnumerableProblem:
    """One binary unit read out linearly into a squared or logistic loss."""
    a = rng.uniform(-3.0, 3.0, size=1)
    v = rng.normal(0.0, 2.0, size=1)
    c = float(rng.normal())
    y = float(rng.integers(0, 2))
    loss, grad = _readout_loss("squared" if rng.random() < 0.5 else "logistic", v, c, y)
    return EnumerableProblem(loss=loss, a=a, loss_grad=grad)
