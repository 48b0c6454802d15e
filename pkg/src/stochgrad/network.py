"""Gated conditional-computation layer with a softmax readout.

The gater (input -> tanh bottleneck of size M -> N gating units) produces
sparse gates ``h``; the expert path is a plain affine map to N hidden units
``H``; the layer output is ``h * H``. Expert columns only need computing where
``h != 0``, which ``sparse_forward`` exploits and counts.
"""
from __future__ import annotations

import io
import json
import warnings
import zipfile
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .mathcore import DimensionError, RngStream, affine, as_matrix, logit, sigm
from .noise import BetaNoiseSpec, derive_beta_params, sample_beta, test_time_noise
from .units import (
    UnitActivation,
    UnitKind,
    noisy_rectifier_forward,
    rectifier_forward,
    sbn_forward,
    sigmoid_forward,
    sts_forward,
    unit_statistics,
)

CHECKPOINT_FORMAT = "stochgrad-checkpoint"
CHECKPOINT_VERSION = 1

GATER_PARAMS = ("gater_W1", "gater_b1", "gater_W2", "gater_b2")
EXPERT_PARAMS = ("expert_W", "expert_b")
OUTPUT_PARAMS = ("out_W", "out_b")
WEIGHT_MATRICES = ("gater_W1", "gater_W2", "expert_W", "out_W")


class CalibrationError(ValueError):
    pass


@dataclass
class GatedLayer:
    gater_W1: np.ndarray
    gater_b1: np.ndarray
    gater_W2: np.ndarray
    gater_b2: np.ndarray
    expert_W: np.ndarray
    expert_b: np.ndarray
    kind: UnitKind = UnitKind.STRAIGHT_THROUGH
    noise_sd: float = 1.0
    beta_noise: Optional[BetaNoiseSpec] = None
    noise: str = "gaussian"
    threshold: Optional[float] = None

    def __post_init__(self):
        self.kind = UnitKind(self.kind)
        d, M = self.gater_W1.shape
        if self.gater_W2.shape[0] != M or self.expert_W.shape[0] != d:
            raise DimensionError("gater and expert weights disagree on dimensions")
        if self.gater_W2.shape[1] != self.expert_W.shape[1]:
            raise DimensionError("one gating unit per expert unit is required")

    @property
    def d(self) -> int:
        return self.gater_W1.shape[0]

    @property
    def M(self) -> int:
        return self.gater_W1.shape[1]

    @property
    def N(self) -> int:
        return self.gater_W2.shape[1]

    @property
    def test_shift(self) -> float:
        """Mean of the pre-sigmoid noise, substituted for it at test time."""
        return 0.0 if self.beta_noise is None else test_time_noise(self.beta_noise)


@dataclass
class GatedNetwork:
    layer: GatedLayer
    out_W: np.ndarray
    out_b: np.ndarray

    @property
    def classes(self) -> int:
        return self.out_W.shape[1]

    def params(self) -> dict:
        names = GATER_PARAMS + EXPERT_PARAMS
        out = {n: getattr(self.layer, n) for n in names}
        out["out_W"] = self.out_W
        out["out_b"] = self.out_b
        return out

    def set_params(self, params: dict) -> None:
        for name, value in params.items():
            if name in OUTPUT_PARAMS:
                setattr(self, name, value)
            else:
                setattr(self.layer, name, value)

    def copy(self) -> "GatedNetwork":
        net = GatedNetwork(layer=GatedLayer(**{**self.layer.__dict__}), out_W=self.out_W, out_b=self.out_b)
        net.set_params({k: v.copy() for k, v in self.params().items()})
        return net


class MacCount(NamedTuple):
    gater_macs: int
    expert_macs_dense: int
    expert_macs_sparse: int
    output_macs: int = 0


def initial_gate_bias(kind: UnitKind, target: float, noise_sd: float = 1.0, noise: str = "gaussian") -> float:
    """Gate bias that makes a freshly initialized unit fire at roughly ``target``."""
    kind = UnitKind(kind)
    if kind.is_baseline_sigmoid:
        return 0.0
    if kind is UnitKind.STS:
        # P(h > 0) = sqrt(sigm(a))
        return float(logit(target**2))
    if kind is UnitKind.NOISY_RECTIFIER and noise == "logistic":
        return float(logit(target))
    if kind is UnitKind.NOISY_RECTIFIER:
        from statistics import NormalDist

        return float(noise_sd * NormalDist().inv_cdf(target))
    if kind is UnitKind.RECTIFIER:
        return 0.0
    return float(logit(target))


def init_network(d: int, M: int, N: int, classes: int = 10, kind=UnitKind.STRAIGHT_THROUGH,
                 rng: Optional[RngStream] = None, target: float = 0.1, noise_sd: float = 1.0,
                 beta: Optional[float] = None, noise: str = "gaussian") -> GatedNetwork:
    """Uniform Glorot initialization; gate biases start near the sparsity target."""
    kind = UnitKind(kind)
    rng = rng or RngStream(0)

    def glorot(name, fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.child(name).uniform((fan_in, fan_out))
        return (2.0 * u - 1.0) * r

    beta_noise = derive_beta_params(beta, target) if (beta is not None and kind is UnitKind.STS) else None
    b2 = np.full(N, initial_gate_bias(kind, target, noise_sd, noise))
    if beta_noise is not None:
        b2 -= test_time_noise(beta_noise)
    layer = GatedLayer(
        gater_W1=glorot(1, d, M), gater_b1=np.zeros(M),
        gater_W2=glorot(2, M, N), gater_b2=b2,
        expert_W=glorot(3, d, N), expert_b=np.zeros(N),
        kind=kind, noise_sd=noise_sd, beta_noise=beta_noise, noise=noise,
    )
    return GatedNetwork(layer=layer, out_W=glorot(4, N, classes), out_b=np.zeros(classes))


class GaterOutput(NamedTuple):
    hidden: np.ndarray
    a: np.ndarray
    h: np.ndarray
    act: UnitActivation


def gater_preactivation(x, layer: GatedLayer) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(affine(x, layer.gater_W1, layer.gater_b1))
    return hidden, affine(hidden, layer.gater_W2, layer.gater_b2)


def gate_values(layer: GatedLayer, a) -> np.ndarray:
    """Deterministic per-kind gate strength that the test-time threshold cuts."""
    kind = layer.kind
    if kind is UnitKind.NOISY_RECTIFIER:
        # expected activation; max(0, a) alone is zero for every unit that fires only through noise
        return unit_statistics(kind, a, layer.noise, layer.noise_sd).mean
    if kind.is_rectifier:
        return np.maximum(0.0, a)
    if kind is UnitKind.STS:
        return np.sqrt(sigm(a + layer.test_shift))
    return sigm(a)


def deterministic_gates(layer: GatedLayer, a) -> np.ndarray:
    kind = layer.kind
    if kind.is_baseline_sigmoid:
        return sigm(a)
    v = gate_values(layer, a)
    if kind.is_binary:
        thr = 0.5 if layer.threshold is None else layer.threshold
        return (v > thr).astype(np.float64)
    thr = 0.0 if layer.threshold is None else layer.threshold
    return np.where(v > thr, v, 0.0)


def sample_gates(layer: GatedLayer, a, rng: RngStream) -> UnitActivation:
    kind = layer.kind
    if kind is UnitKind.NOISY_RECTIFIER:
        return noisy_rectifier_forward(a, rng, layer.noise, layer.noise_sd)
    if kind is UnitKind.RECTIFIER:
        return rectifier_forward(a)
    if kind is UnitKind.STS:
        if layer.beta_noise is not None:
            a = a + sample_beta(layer.beta_noise, rng.child("beta"), size=np.shape(a))
        return sts_forward(a, rng)
    if kind.is_binary:
        return sbn_forward(a, rng)
    if kind is UnitKind.SIGMOID_NOISE:
        return sigmoid_forward(a, rng, layer.noise_sd)
    return sigmoid_forward(a)


def gater_forward(x, layer: GatedLayer, rng: Optional[RngStream] = None, mode: str = "train") -> GaterOutput:
    hidden, a = gater_preactivation(x, layer)
    if mode == "train":
        act = sample_gates(layer, a, rng)
    elif mode == "test":
        act = UnitActivation(a=a, h=deterministic_gates(layer, a))
    else:
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    return GaterOutput(hidden, a, act.h, act)


def expert_forward(x, layer: GatedLayer, exact: bool = False) -> np.ndarray:
    """Linear expert units. ``exact`` uses the fixed-order kernel of the sparse path."""
    x = as_matrix(x)
    if not exact:
        return affine(x, layer.expert_W, layer.expert_b)
    B, N = x.shape[0], layer.N
    rows, cols = np.divmod(np.arange(B * N), N)
    return _expert_pairs(x, layer, rows, cols).reshape(B, N)


def _expert_pairs(x, layer: GatedLayer, rows, cols, chunk: int = 16384) -> np.ndarray:
    """Expert value for each (example, unit) pair, accumulated in input order.

    The accumulation order is fixed per pair, so a pair gets the same bits
    whether it is computed alone or alongside every other pair.
    """
    x = as_matrix(x)
    if x.shape[1] != layer.d:
        raise DimensionError(f"x has {x.shape[1]} columns, layer expects {layer.d}")
    W, b = layer.expert_W, layer.expert_b
    out = np.empty(len(rows))
    for start in range(0, len(rows), chunk):
        r, c = rows[start:start + chunk], cols[start:start + chunk]
        xr = np.ascontiguousarray(x[r].T)
        wc = np.ascontiguousarray(W[:, c])
        acc = np.zeros(len(r))
        for t in range(layer.d):
            acc += xr[t] * wc[t]
        out[start:start + chunk] = acc + b[c]
    return out


def gated_output(h, H) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if h.shape != H.shape:
        raise DimensionError(f"gate shape {h.shape} differs from expert shape {H.shape}")
    # closed gates give +0.0 whatever the sign of H
    return np.where(h != 0, h * H, 0.0)


class SparseResult(NamedTuple):
    out: np.ndarray
    h: np.ndarray
    macs: MacCount


def count_macs(layer: GatedLayer, batch: int, active: int, classes: int = 0) -> MacCount:
    return MacCount(
        gater_macs=batch * (layer.d * layer.M + layer.M * layer.N),
        expert_macs_dense=batch * layer.d * layer.N,
        expert_macs_sparse=layer.d * active,
        output_macs=active * classes,
    )


def sparse_forward(x, layer: GatedLayer, rng: Optional[RngStream] = None, mode: str = "test",
                   classes: int = 0) -> SparseResult:
    """Gates first, then only the expert columns whose gate is open."""
    x = as_matrix(x)
    g = gater_forward(x, layer, rng, mode)
    rows, cols = np.nonzero(g.h)
    out = np.zeros_like(g.h)
    if len(rows):
        H_active = _expert_pairs(x, layer, rows, cols)
        out[rows, cols] = g.h[rows, cols] * H_active
    return SparseResult(out, g.h, count_macs(layer, x.shape[0], len(rows), classes))


def dense_forward(x, layer: GatedLayer, rng: Optional[RngStream] = None, mode: str = "test") -> np.ndarray:
    """Reference dense path with the same per-pair arithmetic as ``sparse_forward``."""
    g = gater_forward(x, layer, rng, mode)
    return gated_output(g.h, expert_forward(x, layer, exact=True))


def calibrate_threshold(values, target: float) -> float:
    """Threshold above which a fraction ``target`` of the pooled values lies."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise CalibrationError("cannot calibrate a threshold on an empty pool")
    thr = float(np.quantile(values, 1.0 - target))
    if np.all(values == values[0]):
        warnings.warn("all pooled gate values are equal; active fraction is degenerate")
    return thr


def calibrate(net_or_layer, x, target: float, batch: int = 1000) -> float:
    """Set the layer's test-time threshold from inputs ``x``; returns it."""
    layer = net_or_layer.layer if isinstance(net_or_layer, GatedNetwork) else net_or_layer
    x = as_matrix(x)
    pool = [gate_values(layer, gater_preactivation(x[i:i + batch], layer)[1])
            for i in range(0, x.shape[0], batch)]
    layer.threshold = calibrate_threshold(np.concatenate([v.ravel() for v in pool]), target)
    return layer.threshold


def predict_logits(net: GatedNetwork, x, rng: Optional[RngStream] = None, mode: str = "test"):
    """Logits and gates of a full forward pass through the dense fast path."""
    g = gater_forward(x, net.layer, rng, mode)
    c = gated_output(g.h, expert_forward(x, net.layer))
    return affine(c, net.out_W, net.out_b), g.h


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(net: GatedNetwork, path, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` container whose ``header`` entry is a JSON document."""
    layer = net.layer
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": layer.kind.value,
        "noise": layer.noise,
        "noise_sd": layer.noise_sd,
        "beta": None if layer.beta_noise is None else layer.beta_noise.beta,
        "target": None if layer.beta_noise is None else layer.beta_noise.target,
        "threshold": layer.threshold,
        "shapes": {k: list(v.shape) for k, v in net.params().items()},
        "extra": extra or {},
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    arrays.update({k: np.asarray(v, dtype=np.float64) for k, v in net.params().items()})
    # written entry by entry with a fixed timestamp so equal networks give equal bytes
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> tuple[GatedNetwork, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        arrays = {k: z[k] for k in header["shapes"]}
    beta_noise = None
    if header["beta"] is not None:
        beta_noise = derive_beta_params(header["beta"], header["target"])
    layer = GatedLayer(
        **{k: arrays[k] for k in GATER_PARAMS + EXPERT_PARAMS},
        kind=UnitKind(header["kind"]), noise=header["noise"], noise_sd=header["noise_sd"],
        beta_noise=beta_noise, threshold=header["threshold"],
    )
    return GatedNetwork(layer=layer, out_W=arrays["out_W"], out_b=arrays["out_b"]), header
