"""Forward sampling for the stochastic and deterministic gating units."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import ndtr

from .mathcore import RngStream, sample_gaussian, sample_logistic, sigm, softplus


class UnitKind(str, enum.Enum):
    NOISY_RECTIFIER = "noisy-rect"
    STS = "sts"
    SBN = "sbn"
    STRAIGHT_THROUGH = "st"
    RECTIFIER = "rect"
    SIGMOID = "sigmoid"
    SIGMOID_NOISE = "sigmoid-noise"

    @property
    def is_rectifier(self) -> bool:
        return self in (UnitKind.NOISY_RECTIFIER, UnitKind.RECTIFIER)

    @property
    def is_binary(self) -> bool:
        return self in (UnitKind.SBN, UnitKind.STRAIGHT_THROUGH)

    @property
    def is_baseline_sigmoid(self) -> bool:
        return self in (UnitKind.SIGMOID, UnitKind.SIGMOID_NOISE)


class UnsupportedKindError(ValueError):
    pass


@dataclass
class UnitActivation:
    """Everything a backward pass needs to replay one forward sample.

    Fields that do not apply to a unit kind are left as ``None``. All fields
    may be scalars or arrays of a common shape.
    """

    a: np.ndarray
    h: np.ndarray
    z: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None


def noisy_rectifier_forward(a, rng: Optional[RngStream] = None, noise: str = "gaussian",
                            sd: float = 1.0, z=None) -> UnitActivation:
    """``h = max(0, a + z)`` with Gaussian (scaled by ``sd``) or logistic noise."""
    a = np.asarray(a, dtype=np.float64)
    if z is None:
        if noise == "gaussian":
            z = sample_gaussian(rng, 0.0, sd, size=a.shape)
        elif noise == "logistic":
            z = sample_logistic(rng, size=a.shape)
        else:
            raise ValueError(f"unknown noise kind {noise!r}")
    z = np.asarray(z, dtype=np.float64)
    return UnitActivation(a=a, z=z, h=np.maximum(0.0, a + z))


def rectifier_forward(a) -> UnitActivation:
    a = np.asarray(a, dtype=np.float64)
    return UnitActivation(a=a, z=np.zeros_like(a), h=np.maximum(0.0, a))


def sts_forward(a, rng: Optional[RngStream] = None, u=None) -> UnitActivation:
    """Stochastic-times-smooth unit: ``h = b * sqrt(p)`` with ``b ~ Bernoulli(sqrt(p))``."""
    a = np.asarray(a, dtype=np.float64)
    p = sigm(a)
    root = np.sqrt(p)
    if u is None:
        u = rng.uniform(a.shape)
    b = (np.asarray(u) < root).astype(np.float64)
    return UnitActivation(a=a, p=p, b=b, z=np.asarray(u, dtype=np.float64), h=b * root)


def sbn_forward(a, rng: Optional[RngStream] = None, u=None) -> UnitActivation:
    """Stochastic binary neuron with ``P(h = 1 | a) = sigm(a)``.

    The unit fires when the uniform draw falls *below* ``sigm(a)``.
    """
    a = np.asarray(a, dtype=np.float64)
    p = sigm(a)
    if u is None:
        u = rng.uniform(a.shape)
    u = np.asarray(u, dtype=np.float64)
    h = (u < p).astype(np.float64)
    return UnitActivation(a=a, p=p, b=h, z=u, h=h)


# straight-through units sample exactly like SBNs; only the backward pass differs
straight_through_forward = sbn_forward


def sigmoid_forward(a, rng: Optional[RngStream] = None, sd: float = 0.0, z=None) -> UnitActivation:
    a = np.asarray(a, dtype=np.float64)
    if z is None:
        z = sample_gaussian(rng, 0.0, sd, size=a.shape) if sd > 0 else np.zeros_like(a)
    z = np.asarray(z, dtype=np.float64)
    p = sigm(a + z)
    return UnitActivation(a=a, z=z, p=p, h=p)


class UnitStats(NamedTuple):
    mean: float
    p_active: float


def unit_statistics(kind, a, noise: str = "logistic", sd: float = 1.0) -> UnitStats:
    """Closed-form ``E[h]`` and ``P(h > 0)`` given the pre-activation ``a``."""
    kind = UnitKind(kind)
    if kind is UnitKind.NOISY_RECTIFIER:
        if noise == "logistic":
            return UnitStats(softplus(a), sigm(a))
        if noise != "gaussian":
            raise UnsupportedKindError(f"no closed form for {noise!r} noise")
        a = np.asarray(a, dtype=np.float64)
        if sd == 0:
            return UnitStats(np.maximum(a, 0.0), (a > 0).astype(np.float64))
        # rectified Gaussian: E = a Phi(a/sd) + sd phi(a/sd)
        t = a / sd
        return UnitStats(a * ndtr(t) + sd * np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi), ndtr(t))
    if kind is UnitKind.STS:
        p = sigm(a)
        return UnitStats(p, np.sqrt(p))
    if kind in (UnitKind.SBN, UnitKind.STRAIGHT_THROUGH):
        p = sigm(a)
        return UnitStats(p, p)
    raise UnsupportedKindError(f"no closed-form statistics for {kind.value}")
