"""Sparsity penalties, the adaptive penalty weight and dead-unit revival."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .mathcore import ParameterError

log = logging.getLogger(__name__)

P_CLAMP = 1e-7


class Penalty(NamedTuple):
    value: float
    grad_p: np.ndarray
    clamped: bool = False


def kl_penalty(p, s: float, lam: float) -> Penalty:
    """``-lam * sum_i (s log p_i + (1 - s) log(1 - p_i))`` and its gradient in ``p``.

    ``p`` holds per-unit mean activations over a mini-batch. Values outside
    the open unit interval are clamped to ``[1e-7, 1 - 1e-7]`` and flagged.
    """
    p = np.asarray(p, dtype=np.float64)
    clamped = bool(np.any((p <= 0) | (p >= 1)))
    if clamped:
        log.debug("kl_penalty: clamping %d mean activations", int(np.sum((p <= 0) | (p >= 1))))
    p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    if lam == 0:
        return Penalty(0.0, np.zeros_like(p), clamped)
    value = -lam * float(np.sum(s * np.log(p) + (1.0 - s) * np.log1p(-p)))
    grad = -lam * (s / p - (1.0 - s) / (1.0 - p))
    return Penalty(value, grad, clamped)


def l1_penalty(p, lam: float) -> Penalty:
    p = np.asarray(p, dtype=np.float64)
    return Penalty(lam * float(np.sum(np.abs(p))), lam * np.sign(p))


@dataclass
class SparsityController:
    target: float = 0.1
    lam: float = 0.01
    band: float = 0.01
    lambda_step: float = 1.1
    mode: str = "kl"
    lam_min: float = 1e-6
    lam_max: float = 1e6

    def __post_init__(self):
        if not 0 < self.target < 1:
            raise ParameterError("sparsity target must lie in (0, 1)")
        if self.lam < 0 or self.band <= 0 or self.lambda_step <= 1:
            raise ParameterError("need lam >= 0, band > 0 and lambda_step > 1")
        if self.mode not in ("kl", "l1", "none"):
            raise ParameterError(f"unknown penalty mode {self.mode!r}")

    def penalty(self, p) -> Penalty:
        if self.mode == "kl":
            return kl_penalty(p, self.target, self.lam)
        if self.mode == "l1":
            return l1_penalty(p, self.lam)
        p = np.asarray(p, dtype=np.float64)
        return Penalty(0.0, np.zeros_like(p))


def adapt_lambda(ctrl: SparsityController, s_e: float) -> SparsityController:
    """Raise ``lam`` above the band around the target, lower it below.

    The multiplicative walk is clipped to ``[lam_min, lam_max]`` so a long
    stretch on one side of the band cannot drive it to where recovery takes
    thousands of steps.
    """
    if s_e > ctrl.target + ctrl.band:
        return replace(ctrl, lam=min(ctrl.lam * ctrl.lambda_step, max(ctrl.lam, ctrl.lam_max)))
    if s_e < ctrl.target - ctrl.band:
        return replace(ctrl, lam=max(ctrl.lam / ctrl.lambda_step, min(ctrl.lam, ctrl.lam_min)))
    return ctrl


@dataclass
class FiringRateState:
    rate: np.ndarray
    decay: float = 0.99
    threshold: float = 0.02
    bias_step: float = 0.05

    @classmethod
    def start(cls, n_units: int, initial: float = 0.1, **kw) -> "FiringRateState":
        return cls(rate=np.full(n_units, float(initial)), **kw)

    def update(self, h) -> "FiringRateState":
        """Fold in a batch ``h`` of shape (batch, units) or a single (units,) row."""
        active = (np.asarray(h) > 0).astype(np.float64)
        if active.ndim == 2:
            active = active.mean(axis=0)
        rate = self.decay * self.rate + (1.0 - self.decay) * active
        return replace(self, rate=rate)


def revive_dead_units(state: FiringRateState, biases) -> np.ndarray:
    """Push up the bias of every unit whose firing rate is under the threshold."""
    biases = np.asarray(biases, dtype=np.float64)
    return biases + np.where(state.rate < state.threshold, state.bias_step, 0.0)
