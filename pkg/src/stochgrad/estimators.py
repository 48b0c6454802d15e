"""Gradient estimators with respect to the pre-activation ``a`` of a unit.

Every function here works elementwise on scalars or arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mathcore import dsigm, sigm
from .units import UnitActivation

ST_VARIANTS = ("plain", "sigmoid-deriv")


def reinforce_grad(h, a, L):
    """Uncentered estimator ``(h - sigm(a)) * L`` for a stochastic binary neuron."""
    return (np.asarray(h, dtype=np.float64) - sigm(a)) * L


@dataclass
class EstimatorState:
    """Moving averages of ``(h - p)^2 L`` and ``(h - p)^2`` for each unit.

    Their ratio is the variance-minimizing baseline for the centered
    estimator. The baseline stays at 0 until the denominator exceeds ``eps``.
    """

    numerator_avg: np.ndarray
    denominator_avg: np.ndarray
    decay: float = 0.01
    count: int = 0
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_units=None, decay: float = 0.01, eps: float = 1e-8) -> "EstimatorState":
        shape = () if n_units is None else (n_units,)
        return cls(np.zeros(shape), np.zeros(shape), decay=decay, eps=eps)

    def baseline(self):
        den = self.denominator_avg
        safe = np.where(den > self.eps, den, 1.0)
        out = np.where(den > self.eps, self.numerator_avg / safe, 0.0)
        return out[()] if np.ndim(out) == 0 else out


def centered_reinforce_grad(h, a, L, state: EstimatorState | None = None, baseline=None):
    """``(h - sigm(a)) * (L - Lbar)``.

    ``Lbar`` comes from ``baseline`` when given, otherwise from ``state``.
    """
    if baseline is None:
        baseline = 0.0 if state is None else state.baseline()
    return (np.asarray(h, dtype=np.float64) - sigm(a)) * (L - baseline)


def update_baseline(state: EstimatorState, h, a, L) -> EstimatorState:
    """Return a new state after one exponential-moving-average step.

    ``h`` and ``a`` may carry a leading batch axis (shape ``(batch, units)``)
    with ``L`` of shape ``(batch,)``; the batch means then form one step.
    """
    h = np.asarray(h, dtype=np.float64)
    w = (h - sigm(a)) ** 2
    L = np.asarray(L, dtype=np.float64)
    if w.ndim == 2:
        num = (w * L[:, None]).mean(axis=0)
        den = w.mean(axis=0)
    else:
        num = w * L
        den = w
    d = state.decay
    return replace(
        state,
        numerator_avg=(1.0 - d) * state.numerator_avg + d * num,
        denominator_avg=(1.0 - d) * state.denominator_avg + d * den,
        count=state.count + 1,
    )


def straight_through_backward(dL_dh, a, variant: str = "plain"):
    """Pass ``dL/dh`` through the hard threshold as if it were the identity."""
    if variant == "plain":
        return np.asarray(dL_dh, dtype=np.float64) * 1.0
    if variant == "sigmoid-deriv":
        return dL_dh * dsigm(a)
    raise ValueError(f"unknown straight-through variant {variant!r}")


def sts_backward(dL_dh, act: UnitActivation):
    """Chain rule through ``h = b * sqrt(sigm(a))`` holding the draw ``b`` fixed."""
    p = act.p
    return dL_dh * act.b * 0.5 * np.sqrt(p) * (1.0 - p)


def noisy_rectifier_backward(dL_dh, act: UnitActivation):
    return np.where(act.a + act.z > 0, dL_dh, 0.0)
