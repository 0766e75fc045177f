"""Multi-task learning lab: excess-risk task weighting with label-noise experiments."""

from .model import GradientBundle, LossKind, ModelSpec, pareto_dominates
from .noise import NoiseKind, NoiseSpec
from .trainer import MetricsRecord, TrainConfig, fit, stationarity_gap
from .weighting import (
    FisherAccumulator,
    StrategyKind,
    WeightState,
    estimate_excess_exact,
    estimate_excess_fisher,
    mgda_weights,
)

__version__ = "0.1.0"

__all__ = [
    "FisherAccumulator",
    "GradientBundle",
    "LossKind",
    "MetricsRecord",
    "ModelSpec",
    "NoiseKind",
    "NoiseSpec",
    "StrategyKind",
    "TrainConfig",
    "WeightState",
    "estimate_excess_exact",
    "estimate_excess_fisher",
    "fit",
    "mgda_weights",
    "pareto_dominates",
    "stationarity_gap",
    "__version__",
]
