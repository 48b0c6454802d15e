"""Skewed Beta noise for pre-sigmoid activations, with its test-time replacement."""
from __future__ import annotations

from dataclasses import dataclass

from .mathcore import ParameterError, RngStream, logit


@dataclass(frozen=True)
class BetaNoiseSpec:
    """Beta(alpha, beta) noise multiplied by ``scale``.

    ``alpha`` is chosen so that the mode of the raw distribution equals the
    sparsity target, and ``scale`` so that the sigmoid of the scaled mode
    equals the target too.
    """

    alpha: float
    beta: float
    scale: float
    target: float

    @property
    def mode(self) -> float:
        return (self.alpha - 1.0) / (self.alpha + self.beta - 2.0)

    @property
    def raw_mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def test_time_value(self) -> float:
        return test_time_noise(self)


def derive_beta_params(beta: float, s: float = 0.1) -> BetaNoiseSpec:
    if beta <= 1:
        raise ParameterError(f"beta must exceed 1 for the mode to exist, got {beta}")
    if not 0 < s < 1:
        raise ParameterError(f"target must lie in (0, 1), got {s}")
    # (alpha - 1) / (alpha + beta - 2) = s solved for alpha
    alpha = (1.0 + s * (beta - 2.0)) / (1.0 - s)
    mode = (alpha - 1.0) / (alpha + beta - 2.0)
    return BetaNoiseSpec(alpha=alpha, beta=float(beta), scale=float(logit(s)) / mode, target=s)


def sample_beta(spec: BetaNoiseSpec, rng: RngStream, size=None, raw: bool = False):
    """Scaled Beta draws built from two Gamma draws."""
    x = rng.gamma(spec.alpha, size)
    y = rng.gamma(spec.beta, size)
    out = x / (x + y)
    return out if raw else spec.scale * out


def test_time_noise(spec: BetaNoiseSpec) -> float:
    """Deterministic stand-in for the noise at evaluation: the scaled mean."""
    return spec.scale * spec.raw_mean


# keep pytest from collecting the helper above as a test
test_time_noise.__test__ = False
