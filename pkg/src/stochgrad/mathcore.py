"""Dense float64 linear algebra, scalar nonlinearities and keyed random streams.

Matrices are plain ``numpy.ndarray`` objects in row-major, batch-first layout.
"""
from __future__ import annotations

import zlib

import numpy as np

_TWO_53 = float(2**53)


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ParameterError(ValueError):
    """A distribution or controller parameter is outside its domain."""


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {x.shape}")
    return x


def affine(x, W, b) -> np.ndarray:
    """Return ``x @ W + b`` for a batch ``x`` of shape (batch, d)."""
    x = as_matrix(x)
    W = as_matrix(W)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"x has {x.shape[1]} columns but W has {W.shape[0]} rows")
    if b.shape[0] != W.shape[1]:
        raise DimensionError(f"bias has length {b.shape[0]}, expected {W.shape[1]}")
    return x @ W + b


def sigm(a):
    """Logistic sigmoid, evaluated without overflow for large ``|a|``."""
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(-np.abs(a))
    out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def dsigm(a):
    p = sigm(a)
    return p * (1.0 - p)


def softplus(a):
    """``log(1 + exp(a))`` as ``max(a, 0) + log1p(exp(-|a|))``."""
    a = np.asarray(a, dtype=np.float64)
    out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
    return out[()] if out.ndim == 0 else out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out[()] if out.ndim == 0 else out


def _key_from(seed: int, stream: int) -> int:
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ParameterError("seed and stream id must be 64-bit unsigned integers")
    return seed | (stream << 64)


def stream_id(*parts) -> int:
    """Hash a tuple of non-negative integers or strings into a 64-bit stream id."""
    key = tuple(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts)
    ss = np.random.SeedSequence(entropy=0, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by the Philox-4x64 bijection: the 128-bit key is the pair
    ``(seed, stream)`` and every draw advances an internal 256-bit counter, so
    a given key always reproduces the same sequence and distinct keys give
    independent sequences.
    """

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(key=_key_from(self.seed, self.stream)))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def child(self, *parts) -> "RngStream":
        """Independent stream derived from this key and ``parts``."""
        return RngStream(self.seed, stream_id(self.stream, *parts))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None):
        """Uniform draws strictly inside (0, 1)."""
        k = self._gen.integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) / _TWO_53

    def gamma(self, shape, size=None):
        return self._gen.standard_gamma(shape, size=size)

    def normal(self, size=None):
        return self._gen.standard_normal(size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_uniform(rng: RngStream, size=None):
    return rng.uniform(size)


def sample_logistic(rng: RngStream, size=None, u=None):
    """Logistic noise ``log(u / (1 - u))``; ``u`` may be supplied directly."""
    if u is None:
        u = rng.uniform(size)
    u = np.asarray(u, dtype=np.float64)
    out = np.log(u) - np.log1p(-u)
    return out[()] if out.ndim == 0 else out


def sample_gaussian(rng: RngStream, mean=0.0, sd=1.0, size=None):
    if sd < 0:
        raise ParameterError(f"standard deviation must be >= 0, got {sd}")
    if sd == 0:
        return np.full(size, float(mean)) if size is not None else float(mean)
    return mean + sd * rng.normal(size)
