"""Command-line front end: ``verify``, ``bench-variance``, ``train`` and ``evaluate``.

Every option can also come from a config file given with ``--config``
(JSON object or ``key = value`` lines); the command line wins over the file.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, load_idx, load_mnist_dir, split, synth_gaussian_clusters
from .mathcore import RngStream, logit, sigm
from .network import init_network, load_checkpoint, save_checkpoint
from .oracle import (
    EnumerableProblem,
    centered_estimator,
    exact_estimator_moments,
    mc_estimator_stats,
    optimal_baseline,
    reinforce_estimator,
)
from .training import OptimizerConfig, TrainConfig, Trainer, evaluate
from .units import UnitKind
from .verification import run_verification

log = logging.getLogger("stochgrad")

COMMANDS = ("verify", "bench-variance", "train", "evaluate")
BENCH_COLUMNS = ("row", "baseline", "exact_variance", "mc_variance", "exact_mean", "mc_mean")


class ConfigError(ValueError):
    """Inconsistent or malformed experiment configuration."""


@dataclass
class ExperimentConfig:
    command: str = "train"
    # units and estimators
    unit: str = "st"
    st_variant: str = "plain"
    estimator_baseline: str = "optimal"
    baseline_decay: float = 0.01
    reinforce_total_loss: bool = True
    noise: str = "gaussian"
    noise_sd: float = 1.0
    beta: Optional[float] = None
    # sparsity
    sparsity_target: float = 0.1
    band: float = 0.01
    lambda0: float = 0.1
    lambda_step: float = 1.1
    penalty: str = "auto"
    adapt_lambda: str = "auto"
    revive: bool = True
    # network and optimizer
    experts: int = 500
    bottleneck: int = 100
    lr_main: float = 0.1
    lr_gater: Optional[float] = None
    momentum: Optional[float] = None
    max_norm: float = 2.0
    batch: int = 32
    epochs: int = 30
    patience: int = 10
    # data
    dataset: str = "synthetic"
    images: Optional[str] = None
    labels: Optional[str] = None
    mnist_dir: Optional[str] = None
    split: str = "0.8,0.1,0.1"
    train_size: Optional[int] = None
    synth_n: int = 3000
    synth_classes: int = 10
    synth_dim: int = 20
    synth_separation: float = 10.0
    # verification and benchmarks
    mc_samples: int = 1_000_000
    inject_bias: float = 0.0
    bench_p: float = 0.5
    bench_loss: str = "0,1"
    bench_min: float = -1.0
    bench_max: float = 2.0
    bench_points: int = 41
    # evaluation
    checkpoint: Optional[str] = None
    eval_split: str = "test"
    # run
    seed: int = 0
    out: str = "runs/default"
    record_timing: bool = False
    log_level: str = "warning"

    def validate(self) -> None:
        """Reject inconsistent settings before any compute happens."""
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.command in COMMANDS, f"unknown command {self.command!r}; choose one of {', '.join(COMMANDS)}")
        try:
            kind = UnitKind(self.unit)
        except ValueError:
            raise ConfigError(f"unknown --unit {self.unit!r}; choose one of "
                              + ", ".join(k.value for k in UnitKind)) from None
        need(self.st_variant in ("plain", "sigmoid-deriv"), "--st-variant must be plain or sigmoid-deriv")
        need(self.estimator_baseline in ("none", "optimal"), "--estimator-baseline must be none or optimal")
        need(self.noise in ("gaussian", "logistic"), "--noise must be gaussian or logistic")
        need(self.noise_sd >= 0, "--noise-sd must be non-negative")
        need(0 < self.sparsity_target < 1, "--sparsity-target must lie strictly between 0 and 1")
        need(self.penalty in ("auto", "kl", "l1", "none"), "--penalty must be auto, kl, l1 or none")
        need(self.adapt_lambda in ("auto", "on", "off"), "--adapt-lambda must be auto, on or off")
        need(self.dataset in ("synthetic", "idx", "mnist-dir"), "--dataset must be synthetic, idx or mnist-dir")
        need(self.eval_split in ("train", "valid", "test"), "--eval-split must be train, valid or test")
        need(self.baseline_decay > 0 and self.baseline_decay <= 1, "--baseline-decay must lie in (0, 1]")
        need(self.lambda_step > 1, "--lambda-step must exceed 1")
        need(self.epochs >= 0 and self.batch > 0 and self.patience > 0, "epochs, batch and patience must be positive")
        need(self.experts > 0 and self.bottleneck > 0, "--experts and --bottleneck must be positive")
        need(self.mc_samples > 1, "--mc-samples must exceed 1")
        need(0 < self.bench_p < 1, "--bench-p must lie strictly between 0 and 1")
        need(self.bench_points >= 2 and self.bench_max > self.bench_min, "bench grid needs 2+ points and max > min")
        if self.beta is not None:
            need(kind is UnitKind.STS, "--beta adds Beta noise to STS gates only; drop it or use --unit sts")
            need(self.beta > 1, "--beta must exceed 1")
        if self.estimator_baseline == "none" and kind is not UnitKind.SBN and self.command == "train":
            log.info("--estimator-baseline only affects the sbn unit")
        if self.dataset == "idx":
            need(self.images and self.labels, "--dataset idx needs --images and --labels")
        if self.dataset == "mnist-dir":
            need(self.mnist_dir, "--dataset mnist-dir needs --mnist-dir")
        if self.command == "evaluate":
            need(self.checkpoint, "evaluate needs --checkpoint")
        try:
            fr = self.split_fractions
        except ValueError:
            raise ConfigError(f"--split must be three comma-separated numbers, got {self.split!r}") from None
        need(len(fr) == 3 and min(fr) >= 0 and abs(sum(fr) - 1) < 1e-9, "--split fractions must sum to 1")
        try:
            losses = self.bench_losses
        except ValueError:
            raise ConfigError("--bench-loss must be two comma-separated numbers L(0),L(1)") from None
        need(len(losses) == 2, "--bench-loss must be two comma-separated numbers L(0),L(1)")
        if self.command == "train":
            try:
                self.train_config().check(kind)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    @property
    def split_fractions(self) -> tuple:
        return tuple(float(v) for v in self.split.split(","))

    @property
    def bench_losses(self) -> tuple:
        return tuple(float(v) for v in self.bench_loss.split(","))

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig.for_kind(self.unit, lr_main=self.lr_main, lr_gater=self.lr_gater,
                                        momentum=self.momentum, max_norm=self.max_norm,
                                        batch=self.batch, epochs=self.epochs)

    def train_config(self) -> TrainConfig:
        adapt = {"auto": None, "on": True, "off": False}[self.adapt_lambda]
        return TrainConfig(target=self.sparsity_target, penalty=self.penalty, lambda0=self.lambda0,
                           lambda_step=self.lambda_step, band=self.band, adapt=adapt,
                           st_variant=self.st_variant, baseline=self.estimator_baseline,
                           baseline_decay=self.baseline_decay, reinforce_total_loss=self.reinforce_total_loss,
                           revive=self.revive, patience=self.patience, seed=self.seed,
                           record_timing=self.record_timing)


_HINTS = typing.get_type_hints(ExperimentConfig)


def _base_type(name):
    t = _HINTS[name]
    args = [a for a in typing.get_args(t) if a is not type(None)]
    return (args[0] if args else t), type(None) in typing.get_args(t)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(name: str, value):
    """Convert a raw config value to the type of field ``name``."""
    if name not in _HINTS:
        raise ConfigError(f"unknown config key {name!r}")
    base, optional = _base_type(name)
    if value is None or (optional and isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        if not optional:
            raise ConfigError(f"{name} may not be empty")
        return None
    try:
        if base is bool:
            return _parse_bool(value)
        if base is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if base is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def read_config_file(path) -> dict:
    """JSON object or ``key = value`` lines (``#`` comments allowed)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            raw[key] = value
    return {k.replace("-", "_"): coerce(k.replace("-", "_"), v) for k, v in raw.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochgrad", description=__doc__.splitlines()[0],
                                     argument_default=argparse.SUPPRESS)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON or key=value file; command-line flags override it")
    choices = {
        "unit": [k.value for k in UnitKind], "st_variant": ["plain", "sigmoid-deriv"],
        "estimator_baseline": ["none", "optimal"], "noise": ["gaussian", "logistic"],
        "penalty": ["auto", "kl", "l1", "none"], "adapt_lambda": ["auto", "on", "off"],
        "dataset": ["synthetic", "idx", "mnist-dir"], "eval_split": ["train", "valid", "test"],
        "log_level": ["debug", "info", "warning", "error"],
    }
    for f in fields(ExperimentConfig):
        if f.name == "command":
            continue
        flag = "--" + f.name.replace("_", "-")
        base, _ = _base_type(f.name)
        helptext = f"default: {f.default}"
        if base is bool:
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, help=helptext)
        else:
            parser.add_argument(flag, type=lambda v, n=f.name: coerce(n, v), choices=choices.get(f.name),
                                metavar=None if f.name in choices else f.name.upper(), help=helptext)
    return parser


def resolve_config(argv) -> ExperimentConfig:
    ns = vars(build_parser().parse_args(argv))
    merged = {}
    if ns.get("config"):
        merged.update(read_config_file(ns.pop("config")))
    ns.pop("config", None)
    merged.update(ns)
    cfg = ExperimentConfig(**merged)
    cfg.validate()
    return cfg


# -- shared helpers -------------------------------------------------------------------

def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def load_splits(cfg: ExperimentConfig) -> dict:
    if cfg.dataset == "mnist-dir":
        parts = load_mnist_dir(cfg.mnist_dir)
    else:
        if cfg.dataset == "idx":
            full = load_idx(cfg.images, cfg.labels, Path(cfg.images).name)
        else:
            full = synth_gaussian_clusters(cfg.synth_n, cfg.synth_classes, cfg.synth_dim,
                                           cfg.synth_separation, seed=cfg.seed)
        parts = dict(zip(("train", "valid", "test"), split(full, cfg.split_fractions, seed=cfg.seed)))
    if cfg.train_size is not None:
        parts["train"] = parts["train"].subset(slice(0, cfg.train_size))
    return parts


def _eval_summary(net, data: Dataset) -> dict:
    if len(data) == 0:
        return {"error": None, "s_e": None, "mac_ratio": None, "n": 0}
    res = evaluate(net, data)
    return {"error": res.error_rate, "s_e": res.s_e, "loss": res.loss, "n": len(data),
            "mac_ratio": res.macs.expert_macs_sparse / res.macs.expert_macs_dense,
            "expert_macs_sparse": res.macs.expert_macs_sparse, "expert_macs_dense": res.macs.expert_macs_dense}


# -- commands -------------------------------------------------------------------------

def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    report = run_verification(seed=cfg.seed, mc_samples=cfg.mc_samples, inject_bias=cfg.inject_bias)
    _write_json(out / "verify.json", report)
    for c in report["checks"]:
        if not c["passed"]:
            print(f"FAIL {c['name']}: measured {c.get('measured')} bound {c.get('bound')}", file=sys.stderr)
    print(f"{report['n_checks'] - report['n_failed']}/{report['n_checks']} checks passed")
    return 0 if report["passed"] else 1


def cmd_bench_variance(cfg: ExperimentConfig, out: Path) -> int:
    """Exact and Monte Carlo variance of the centered estimate over a baseline grid."""
    l0, l1 = cfg.bench_losses
    prob = EnumerableProblem(loss=lambda h: l0 + (l1 - l0) * float(h[0]), a=[float(logit(cfg.bench_p))])
    best = optimal_baseline(prob, 0)
    grid = np.linspace(cfg.bench_min, cfg.bench_max, cfg.bench_points)
    rows = []

    def row(tag, b, est, j):
        m, v = exact_estimator_moments(est, prob, 0)
        st = mc_estimator_stats(est, prob, 0, cfg.mc_samples, seed=cfg.seed + j)
        rows.append((tag, b, v, st.variance, m, st.mean))

    row("uncentered", 0.0, reinforce_estimator(), 0)
    row("zero", 0.0, centered_estimator(0.0), 0)
    for j, b in enumerate(grid, 1):
        row("grid", float(b), centered_estimator(float(b)), j)
    row("optimal", best, centered_estimator(best), len(grid) + 1)
    with open(out / "bench_variance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    gv = [r for r in rows if r[0] == "grid"]
    argmin = min(gv, key=lambda r: r[2])[1]
    _write_json(out / "bench_summary.json", {
        "p": float(sigm(prob.a[0])), "loss": [l0, l1], "optimal_baseline": best,
        "grid_argmin": argmin, "mc_samples": cfg.mc_samples,
    })
    print(f"optimal baseline {best!r}; grid minimum at {argmin!r}")
    return 0


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    parts = load_splits(cfg)
    train, valid, test = parts["train"], parts["valid"], parts["test"]
    if len(train) == 0:
        raise ConfigError("training split is empty")
    classes = max(d.classes for d in (train, valid, test))
    net = init_network(train.inputs.shape[1], cfg.bottleneck, cfg.experts, classes, cfg.unit,
                       RngStream(cfg.seed).child("init"), cfg.sparsity_target, cfg.noise_sd, cfg.beta, cfg.noise)
    trainer = Trainer(net, cfg.optimizer_config(), cfg.train_config())
    report = trainer.fit(train, valid if len(valid) else None)
    if not len(valid):
        trainer.calibrate(train)
    report.write_csv(out / "train.csv")
    run_config = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "out"}
    save_checkpoint(net, out / "checkpoint.npz", extra={"config": run_config})
    last = report.rows[-1] if report.rows else {}
    summary = {
        "unit": cfg.unit,
        "epochs_run": len(report.rows),
        "final_train_loss": last.get("train_loss"),
        "final_train_s_e": last.get("s_e"),
        "final_lambda": last.get("lambda"),
        "threshold": net.layer.threshold,
        "best_valid_error": min((r["valid_error"] for r in report.rows if r["valid_error"] is not None),
                                default=None),
        "train": _eval_summary(net, train),
        "valid": _eval_summary(net, valid),
        "test": _eval_summary(net, test),
    }
    _write_json(out / "summary.json", summary)
    print(f"valid error {summary['valid']['error']} test error {summary['test']['error']} "
          f"train s_e {summary['final_train_s_e']}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> int:
    net, header = load_checkpoint(cfg.checkpoint)
    data = load_splits(cfg)[cfg.eval_split]
    if data.inputs.shape[1] != net.layer.d:
        raise ConfigError(f"checkpoint expects {net.layer.d} inputs, data has {data.inputs.shape[1]}")
    result = {"checkpoint": str(cfg.checkpoint), "split": cfg.eval_split, "unit": header["kind"],
              **_eval_summary(net, data)}
    _write_json(out / "evaluate.json", result)
    print(f"{cfg.eval_split} error {result['error']} s_e {result['s_e']}")
    return 0


HANDLERS = {"verify": cmd_verify, "bench-variance": cmd_bench_variance, "train": cmd_train,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"stochgrad: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=cfg.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", dataclasses.asdict(cfg))
    try:
        return HANDLERS[cfg.command](cfg, out)
    except ConfigError as exc:
        print(f"stochgrad: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
