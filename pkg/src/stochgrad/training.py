"""SGD training of the gated network with sparsity control and baseline tracking."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .estimators import (
    EstimatorState,
    centered_reinforce_grad,
    noisy_rectifier_backward,
    straight_through_backward,
    sts_backward,
    update_baseline,
)
from .mathcore import RngStream, affine, dsigm
from .network import (
    GATER_PARAMS,
    WEIGHT_MATRICES,
    GatedNetwork,
    MacCount,
    calibrate,
    count_macs,
    expert_forward,
    gated_output,
    gater_forward,
    predict_logits,
)
from .sparsity import FiringRateState, SparsityController, adapt_lambda, revive_dead_units
from .units import UnitKind

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "train_loss", "valid_error", "s_e", "lambda", "expert_macs_sparse", "wall_ms")


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class OptimizerConfig:
    lr_main: float = 0.1
    lr_gater: Optional[float] = None
    momentum: float = 0.0
    max_norm: float = 2.0
    batch: int = 32
    epochs: int = 30

    def __post_init__(self):
        if self.lr_gater is None:
            self.lr_gater = self.lr_main
        if self.lr_main < 0 or self.lr_gater < 0:
            raise ValueError("learning rates must be non-negative")
        if self.max_norm <= 0:
            raise ValueError("max_norm must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def for_kind(cls, kind, **overrides) -> "OptimizerConfig":
        """Per-kind defaults: slow gater for SBN, momentum only for STS."""
        kind = UnitKind(kind)
        defaults = {}
        if kind is UnitKind.SBN:
            defaults["lr_gater"] = 0.001
        if kind is UnitKind.STS:
            defaults["momentum"] = 0.9
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**defaults)


def max_norm_project(W, max_norm: float) -> np.ndarray:
    """Rescale every column whose Euclidean norm exceeds ``max_norm`` onto the ball."""
    W = np.asarray(W, dtype=np.float64)
    norms = np.sqrt(np.sum(W * W, axis=0))
    scale = np.where(norms > max_norm, max_norm / np.where(norms > 0, norms, 1.0), 1.0)
    return W * scale


def sgd_momentum_step(params: dict, grads: dict, velocity: dict, cfg: OptimizerConfig,
                      lr: Optional[dict] = None) -> tuple[dict, dict]:
    """``v <- m v - lr g``; ``theta <- theta + v``; then max-norm on weight matrices.

    ``lr`` optionally maps parameter names to their own learning rate.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for {name}")
    new_params, new_velocity = dict(params), dict(velocity)
    for name, g in grads.items():
        rate = cfg.lr_main if lr is None else lr.get(name, cfg.lr_main)
        v = cfg.momentum * velocity.get(name, 0.0) - rate * g
        theta = params[name] + v
        if name in WEIGHT_MATRICES:
            theta = max_norm_project(theta, cfg.max_norm)
        new_params[name], new_velocity[name] = theta, v
    return new_params, new_velocity


@dataclass
class TrainConfig:
    """Everything besides the optimizer that shapes a training run."""

    target: float = 0.1
    penalty: str = "auto"
    lambda0: float = 0.1
    lambda_step: float = 1.1
    band: float = 0.01
    adapt: Optional[bool] = None
    st_variant: str = "plain"
    baseline: str = "optimal"
    baseline_decay: float = 0.01
    reinforce_total_loss: bool = True
    revive: bool = True
    revive_threshold: float = 0.02
    revive_step: float = 0.05
    firing_decay: float = 0.99
    patience: int = 10
    seed: int = 0
    record_timing: bool = False

    def resolved_penalty(self, kind: UnitKind) -> str:
        if self.penalty != "auto":
            return self.penalty
        if kind.is_baseline_sigmoid:
            return "none"
        return "l1" if kind.is_rectifier else "kl"

    def check(self, kind: UnitKind) -> None:
        pen = self.resolved_penalty(kind)
        if pen == "kl" and kind.is_rectifier:
            raise ValueError("the KL penalty needs sigmoid-family gates; use --penalty l1 for rectifiers")
        if pen == "l1" and not kind.is_rectifier:
            raise ValueError("the L1 penalty applies to rectifier gates; use --penalty kl")
        if self.st_variant not in ("plain", "sigmoid-deriv"):
            raise ValueError(f"unknown straight-through variant {self.st_variant!r}")
        if self.baseline not in ("none", "optimal"):
            raise ValueError(f"unknown baseline {self.baseline!r}")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must increase")
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row.get(c)) for c in REPORT_COLUMNS])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class EvalResult:
    error_rate: float
    s_e: float
    macs: MacCount
    loss: float = float("nan")


def evaluate(net: GatedNetwork, data: Dataset, batch: int = 1000) -> EvalResult:
    """Deterministic evaluation with the layer's current test-time gates."""
    n = len(data)
    if n == 0:
        return EvalResult(float("nan"), float("nan"), count_macs(net.layer, 0, 0, net.classes))
    wrong, active, nll = 0, 0, 0.0
    for i in range(0, n, batch):
        x, y = data.inputs[i:i + batch], data.labels[i:i + batch]
        logits, h = predict_logits(net, x, mode="test")
        wrong += int(np.sum(np.argmax(logits, axis=1) != y))
        active += int(np.count_nonzero(h))
        nll += float(np.sum(_cross_entropy(logits, y)[0]))
    return EvalResult(wrong / n, active / (n * net.layer.N), count_macs(net.layer, n, active, net.classes), nll / n)


def _cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y], np.exp(logp)


class Trainer:
    """Owns the optimizer, sparsity controller, baseline and firing-rate state."""

    def __init__(self, net: GatedNetwork, opt: OptimizerConfig, cfg: Optional[TrainConfig] = None):
        self.net = net
        self.opt = opt
        self.cfg = cfg or TrainConfig()
        kind = net.layer.kind
        self.cfg.check(kind)
        mode = self.cfg.resolved_penalty(kind)
        self.ctrl = SparsityController(target=self.cfg.target, lam=self.cfg.lambda0 if mode != "none" else 0.0,
                                       band=self.cfg.band, lambda_step=self.cfg.lambda_step, mode=mode)
        # the penalty weight is adapted for L1 (rectifier) gates; for KL it is a fixed hyperparameter
        self.adapt = (mode == "l1") if self.cfg.adapt is None else (self.cfg.adapt and mode != "none")
        self.baseline_state = EstimatorState.zeros(net.layer.N, decay=self.cfg.baseline_decay)
        self.firing = FiringRateState.start(net.layer.N, initial=self.cfg.target, decay=self.cfg.firing_decay,
                                            threshold=self.cfg.revive_threshold, bias_step=self.cfg.revive_step)
        self.velocity: dict = {}
        self.lr = {name: (opt.lr_gater if name in GATER_PARAMS else opt.lr_main) for name in net.params()}
        self.epoch = 0
        self.rng = RngStream(self.cfg.seed)

    # -- one mini-batch --------------------------------------------------------
    def loss_and_grads(self, x, y, rng: RngStream):
        net, layer, kind = self.net, self.net.layer, self.net.layer.kind
        B = x.shape[0]
        g = gater_forward(x, layer, rng, "train")
        act, h = g.act, g.h
        H = expert_forward(x, layer)
        c = gated_output(h, H)
        logits = affine(c, net.out_W, net.out_b)
        ce, probs = _cross_entropy(logits, y)

        pen_mode = self.ctrl.mode
        if pen_mode == "kl":
            pen = self.ctrl.penalty(act.p.mean(axis=0))
        else:
            pen = self.ctrl.penalty(h.mean(axis=0))

        dlogits = probs.copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        grads = {"out_W": c.T @ dlogits, "out_b": dlogits.sum(axis=0)}
        dc = dlogits @ net.out_W.T
        dH = dc * h
        grads["expert_W"] = x.T @ dH
        grads["expert_b"] = dH.sum(axis=0)
        dh = dc * H
        if pen_mode == "l1":
            dh = dh + pen.grad_p / B

        if kind is UnitKind.SBN:
            L = ce + pen.value if self.cfg.reinforce_total_loss else ce
            baseline = self.baseline_state.baseline() if self.cfg.baseline == "optimal" else 0.0
            da = centered_reinforce_grad(h, act.a, L[:, None], baseline=baseline) / B
            if self.cfg.baseline == "optimal":
                self.baseline_state = update_baseline(self.baseline_state, h, act.a, L)
        elif kind is UnitKind.STRAIGHT_THROUGH:
            da = straight_through_backward(dh, act.a, self.cfg.st_variant)
        elif kind is UnitKind.STS:
            da = sts_backward(dh, act)
        elif kind.is_rectifier:
            da = noisy_rectifier_backward(dh, act)
        else:
            da = dh * dsigm(act.a + act.z)
        if pen_mode == "kl":
            # act.a already includes any pre-sigmoid noise for STS
            da = da + pen.grad_p / B * dsigm(act.a)

        grads["gater_W2"] = g.hidden.T @ da
        grads["gater_b2"] = da.sum(axis=0)
        dpre = (da @ layer.gater_W2.T) * (1.0 - g.hidden**2)
        grads["gater_W1"] = x.T @ dpre
        grads["gater_b1"] = dpre.sum(axis=0)
        return float(ce.mean()), pen, h, grads

    def step(self, x, y, rng: RngStream) -> tuple[float, float, int]:
        loss, pen, h, grads = self.loss_and_grads(x, y, rng)
        if not math.isfinite(loss):
            raise TrainingDivergence(f"loss became {loss} at epoch {self.epoch}")
        params, self.velocity = sgd_momentum_step(self.net.params(), grads, self.velocity, self.opt, self.lr)
        self.net.set_params(params)
        nnz = int(np.count_nonzero(h))
        s_e = nnz / h.size
        if self.adapt:
            self.ctrl = adapt_lambda(self.ctrl, s_e)
        if self.cfg.revive and self.ctrl.mode != "none":
            self.firing = self.firing.update(h)
            self.net.layer.gater_b2 = revive_dead_units(self.firing, self.net.layer.gater_b2)
        return loss, s_e, nnz

    # -- epochs ------------------------------------------------------------
    def train_epoch(self, data: Dataset) -> dict:
        """One shuffled pass in mini-batches; returns the metrics row."""
        self.epoch += 1
        t0 = time.perf_counter()
        n = len(data)
        row = {"epoch": self.epoch, "train_loss": None, "valid_error": None, "s_e": None,
               "lambda": self.ctrl.lam, "expert_macs_sparse": 0, "wall_ms": None}
        if n == 0:
            return row
        order = self.rng.child("shuffle", self.epoch).permutation(n)
        losses, actives, units = 0.0, 0, 0
        for bi, start in enumerate(range(0, n, self.opt.batch)):
            idx = order[start:start + self.opt.batch]
            x, y = data.inputs[idx], data.labels[idx]
            loss, _, nnz = self.step(x, y, self.rng.child("gates", self.epoch, bi))
            losses += loss * len(idx)
            actives += nnz
            units += len(idx) * self.net.layer.N
        row.update(train_loss=losses / n, s_e=actives / units, **{"lambda": self.ctrl.lam},
                   expert_macs_sparse=self.net.layer.d * actives)
        if self.cfg.record_timing:
            row["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        return row

    def fit(self, train: Dataset, valid: Optional[Dataset] = None, epochs: Optional[int] = None,
            callback=None) -> TrainReport:
        """Train with early stopping on validation error; keeps the best parameters."""
        epochs = self.opt.epochs if epochs is None else epochs
        report = TrainReport()
        best, best_key, since = None, (float("inf"), float("inf")), 0
        for _ in range(epochs):
            row = self.train_epoch(train)
            if valid is not None and len(valid):
                self.calibrate(valid)
                res = evaluate(self.net, valid)
                row["valid_error"] = res.error_rate
                # ties on error (common once it reaches 0) go to the lower validation loss
                key = (res.error_rate, res.loss)
                if key < best_key:
                    best_key, best, since = key, self.net.copy(), 0
                else:
                    since += 1
            report.append(row)
            log.info("epoch %d loss %.4f valid %s s_e %.4f lambda %.4g", row["epoch"],
                     row["train_loss"] or float("nan"), row["valid_error"], row["s_e"] or float("nan"), row["lambda"])
            if callback is not None:
                callback(row)
            if valid is not None and since >= self.cfg.patience:
                break
        if best is not None:
            self.net.set_params(best.params())
            self.net.layer.threshold = best.layer.threshold
        return report

    def calibrate(self, data: Dataset) -> Optional[float]:
        kind = self.net.layer.kind
        if kind.is_baseline_sigmoid:
            return None
        return calibrate(self.net, data.inputs, self.cfg.target)


def train_epoch(trainer: Trainer, data: Dataset) -> dict:
    return trainer.train_epoch(data)


def config_dict(opt: OptimizerConfig, cfg: TrainConfig) -> dict:
    return {"optimizer": asdict(opt), "train": asdict(cfg)}
