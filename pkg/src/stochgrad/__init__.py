"""Gradient estimators for stochastic and hard-threshold neurons.

Covers noisy rectifiers, stochastic-times-smooth units and stochastic binary
neurons (REINFORCE with an optimal baseline, straight-through), plus a gated
conditional-computation layer trained with sparsity control.
"""
from .estimators import (
    EstimatorState,
    centered_reinforce_grad,
    noisy_rectifier_backward,
    reinforce_grad,
    straight_through_backward,
    sts_backward,
    update_baseline,
)
from .mathcore import RngStream, affine, sigm, softplus
from .network import (
    GatedLayer,
    GatedNetwork,
    calibrate,
    dense_forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
    sparse_forward,
)
from .noise import derive_beta_params, sample_beta, test_time_noise
from .sparsity import SparsityController, adapt_lambda, kl_penalty, l1_penalty, revive_dead_units
from .training import OptimizerConfig, TrainConfig, Trainer, evaluate
from .units import UnitKind, noisy_rectifier_forward, sbn_forward, sts_forward, unit_statistics

__all__ = [
    "EstimatorState", "centered_reinforce_grad", "noisy_rectifier_backward", "reinforce_grad",
    "straight_through_backward", "sts_backward", "update_baseline",
    "RngStream", "affine", "sigm", "softplus",
    "GatedLayer", "GatedNetwork", "calibrate", "dense_forward", "init_network", "load_checkpoint",
    "save_checkpoint", "sparse_forward",
    "derive_beta_params", "sample_beta", "test_time_noise",
    "SparsityController", "adapt_lambda", "kl_penalty", "l1_penalty", "revive_dead_units",
    "OptimizerConfig", "TrainConfig", "Trainer", "evaluate",
    "UnitKind", "noisy_rectifier_forward", "sbn_forward", "sts_forward", "unit_statistics",
]
