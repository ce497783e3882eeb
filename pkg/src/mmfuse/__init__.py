"""Bimodal multilabel classification with a variationally trained fusion gate."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    MMFuseError,
    SchemaError,
    TrainingDiverged,
)
from .laplace import laplace_cdf, laplace_kl, laplace_log_prob, laplace_sample
from .metrics import MetricsReport, aggregate_cycles, compute_report
from .model import Model, ModelConfig, build_gmu_baseline, build_model, evaluate, train_step
from .objectives import ElboVariant, LossBreakdown, bce_with_logits
from .rng import Rng
from .tensor import Tensor, grad_check
from .training import FitResult, TrainConfig, fit

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "ElboVariant",
    "FitResult",
    "FormatError",
    "LossBreakdown",
    "MMFuseError",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "Rng",
    "SchemaError",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "aggregate_cycles",
    "bce_with_logits",
    "build_gmu_baseline",
    "build_model",
    "compute_report",
    "evaluate",
    "fit",
    "grad_check",
    "laplace_cdf",
    "laplace_kl",
    "laplace_log_prob",
    "laplace_sample",
    "train_step",
]

__version__ = "0.1.0"
