"""Outer training loop: per-task gradients, weight update, head and shared steps.

Each step follows one fixed ordering: compute every task's gradients against a
snapshot of the parameters, feed them to the weighting strategy (which for the
excess strategy accumulates squared gradients before estimating), update heads
with their own unweighted gradients, then move the shared trunk along the
weight-mixed gradient. Weight decay enters every gradient as an additive
lambda*theta term. Test metrics are evaluated once per epoch and carried
forward on the per-step records in between.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import weighting
from .data import TaskData
from .errors import ConfigError, DimensionError, NumericsError
from .model import GradientBundle, LossKind, ModelSpec
from .numcore import ParamPartition
from .weighting import StrategyKind, StrategyState, TaskObservations


@dataclass
class TrainConfig:
    eta_theta: float
    eta_alpha: float
    epochs: int
    batch_size: int
    strategy: StrategyKind = StrategyKind.EXCESS
    warmup_epochs: int = 3
    weight_decay: float = 0.0
    seed: int = 0
    eta_decay: bool = False
    normalize_excess: bool = True

    def validate(self) -> None:
        if self.eta_theta <= 0 or self.eta_alpha <= 0:
            raise ConfigError("step sizes must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must be < epochs")


@dataclass
class MetricsRecord:
    """One observable row per training step."""

    step: int
    per_task_train_loss: list[float]
    per_task_test_metric: list[float]
    alpha: list[float]
    raw_excess: list[float] | None
    relative_excess: list[float] | None
    stationarity_gap: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "per_task_train_loss": self.per_task_train_loss,
            "per_task_test_metric": self.per_task_test_metric,
            "alpha": self.alpha,
            "raw_excess": self.raw_excess,
            "relative_excess": self.relative_excess,
            "stationarity_gap": self.stationarity_gap,
        }


def stationarity_gap(grads, alpha) -> float:
    """Squared norm of the alpha-weighted shared-gradient sum."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(grads) != alpha.shape[0]:
        raise DimensionError(f"{len(grads)} gradients vs {alpha.shape[0]} weights")
    mix = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    for a, g in zip(alpha, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != mix.shape:
            raise DimensionError("gradients must share one length")
        mix += a * g
    return float(mix @ mix)


class _BatchStream:
    """Seeded per-epoch batch schedule for one task.

    The permutation is keyed by (seed, epoch, n, cycle), so tasks with equal
    length see the same row order, and shorter tasks recycle through fresh
    reshuffles while longer ones finish the epoch.
    """

    def __init__(self, n: int, batch_size: int, seed: int, epoch: int):
        self.n = n
        self.batch = min(batch_size, n)
        self.seed = seed
        self.epoch = epoch
        self.cycle = 0
        self.pos = 0
        self.perm = self._permutation()

    def _permutation(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.epoch, self.n, self.cycle])
        return rng.permutation(self.n)

    def next_indices(self) -> np.ndarray:
        take = self.perm[self.pos:self.pos + self.batch]
        self.pos += self.batch
        if take.shape[0] < self.batch:
            self.cycle += 1
            self.perm = self._permutation()
            deficit = self.batch - take.shape[0]
            take = np.concatenate([take, self.perm[:deficit]])
            self.pos = deficit
        return take


def train_step(
    p: ParamPartition,
    spec: ModelSpec,
    strat: StrategyState,
    batches,
    cfg: TrainConfig,
    step: int,
) -> MetricsRecord:
    """One outer iteration; mutates the partition and strategy state in place."""
    m = p.num_tasks
    if len(batches) != m:
        raise DimensionError(f"expected {m} batches, got {len(batches)}")

    bundles: list[GradientBundle] = []
    for i in range(m):
        bundle = model_mod.loss_and_grad(p, spec, batches[i], i)
        if cfg.weight_decay:
            bundle.shared_grad += cfg.weight_decay * p.shared
            bundle.head_grad += cfg.weight_decay * p.per_task[i]
        finite = (
            np.isfinite(bundle.loss_value)
            and np.isfinite(bundle.shared_grad).all()
            and np.isfinite(bundle.head_grad).all()
        )
        if not finite:
            raise NumericsError(f"non-finite gradient for task {i} at step {step}")
        bundles.append(bundle)

    scale = 1.0 / math.sqrt(step) if cfg.eta_decay else 1.0
    obs = TaskObservations(
        losses=np.array([b.loss_value for b in bundles]),
        shared_grads=[b.shared_grad for b in bundles],
    )
    weights, diag = weighting.strategy_step(strat, obs, eta_scale=scale)

    eta = cfg.eta_theta * scale
    for i, b in enumerate(bundles):
        p.per_task[i] -= eta * b.head_grad
    shared_grads = [b.shared_grad for b in bundles]
    gap = stationarity_gap(shared_grads, weights.alpha)
    mix = np.zeros_like(p.shared)
    for a, g in zip(weights.alpha, shared_grads):
        mix += a * g
    p.shared -= eta * mix

    return MetricsRecord(
        step=step,
        per_task_train_loss=[b.loss_value for b in bundles],
        per_task_test_metric=[],
        alpha=diag["alpha"],
        raw_excess=diag.get("raw_excess"),
        relative_excess=diag.get("relative_excess"),
        stationarity_gap=gap,
    )


def evaluate(p: ParamPartition, spec: ModelSpec, datasets: list[TaskData]) -> list[float]:
    """Per-task test metric: accuracy for classification, MSE for regression."""
    out = []
    for i, td in enumerate(datasets):
        pred = model_mod.forward(p, spec, td.test.x, i)
        _, kind = spec.task_heads[i]
        if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
            out.append(float((pred.argmax(axis=1) == td.test.y).mean()))
        else:
            out.append(float(((pred - td.test.y) ** 2).mean()))
    return out


def _check_datasets(spec: ModelSpec, datasets: list[TaskData]) -> None:
    if len(datasets) != spec.num_tasks:
        raise ConfigError(
            f"{len(datasets)} datasets for {spec.num_tasks} task heads"
        )
    for i, td in enumerate(datasets):
        for ds in (td.train, td.test):
            if ds.x.shape[1] != spec.input_dim:
                raise ConfigError(
                    f"task {i}: input dim {ds.x.shape[1]} != model input {spec.input_dim}"
                )


def fit(
    datasets: list[TaskData],
    model_spec: ModelSpec,
    cfg: TrainConfig,
    params: ParamPartition | None = None,
) -> tuple[ParamPartition, list[MetricsRecord]]:
    """Run epochs x batches training steps; fully deterministic given cfg.seed.

    Datasets are expected standardized and noise-injected already. An explicit
    initial partition overrides the seeded He initialization.
    """
    cfg.validate()
    if model_spec.num_tasks < 2:
        raise ConfigError("training requires at least two tasks")
    _check_datasets(model_spec, datasets)

    p = params if params is not None else model_mod.init_params(model_spec, cfg.seed)
    m = model_spec.num_tasks
    lengths = [td.train.x.shape[0] for td in datasets]
    steps_per_epoch = max(1, math.ceil(max(lengths) / cfg.batch_size))
    strat = weighting.make_strategy(
        cfg.strategy,
        m,
        shared_dim=p.shared.shape[0],
        eta_alpha=cfg.eta_alpha,
        warmup_steps=cfg.warmup_epochs * steps_per_epoch,
        normalize_excess=cfg.normalize_excess,
    )

    records: list[MetricsRecord] = []
    current_metrics = evaluate(p, model_spec, datasets)
    step = 0
    for epoch in range(cfg.epochs):
        streams = [
            _BatchStream(lengths[i], cfg.batch_size, cfg.seed, epoch) for i in range(m)
        ]
        for _ in range(steps_per_epoch):
            step += 1
            batches = []
            for i, td in enumerate(datasets):
                rows = streams[i].next_indices()
                batches.append((td.train.x[rows], td.train.y[rows]))
            rec = train_step(p, model_spec, strat, batches, cfg, step)
            rec.per_task_test_metric = list(current_metrics)
            records.append(rec)
        current_metrics = evaluate(p, model_spec, datasets)
        records[-1].per_task_test_metric = list(current_metrics)
    return p, records
