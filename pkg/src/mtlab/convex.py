"""Convex testbed: shared linear predictor, squared loss, optional per-task
additive offsets.

Each task i holds a design matrix and a target vector; predictions are
x @ (w_shared + v_i) with v_i fixed at zero when offsets are disabled. The
objective is then a convex quadratic in all trainable parameters, every task
can attain its own least-squares optimum when offsets are on, and the exact
optimum is available from a direct solve. This is the setting in which the
convergence and Pareto-stationarity properties of the weighting scheme are
checked numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import weighting
from .errors import ConfigError
from .trainer import stationarity_gap
from .weighting import StrategyKind, TaskObservations


@dataclass
class LinearTask:
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ConfigError("task needs x (n, d) and y (n,) with matching n")


def task_loss(task: LinearTask, w: np.ndarray) -> float:
    r = task.x @ w - task.y
    return float((r * r).mean())


def task_grad(task: LinearTask, w: np.ndarray) -> np.ndarray:
    r = task.x @ w - task.y
    return 2.0 * (task.x.T @ r) / task.x.shape[0]


def least_squares_optimum(task: LinearTask) -> tuple[np.ndarray, float]:
    """Direct solver for the task's own optimal linear predictor and loss."""
    w, *_ = np.linalg.lstsq(task.x, task.y, rcond=None)
    return w, task_loss(task, w)


def max_curvature(tasks: list[LinearTask]) -> float:
    """Largest Hessian eigenvalue over the tasks (Hessian is 2 X'X / n)."""
    lam = 0.0
    for t in tasks:
        s = np.linalg.svd(t.x, compute_uv=False)
        lam = max(lam, 2.0 * float(s[0] ** 2) / t.x.shape[0])
    return lam


@dataclass
class ConvexRunResult:
    alphas: np.ndarray          # (steps, m)
    losses: np.ndarray          # (steps, m)
    gaps: np.ndarray            # (steps,) weighted shared-gradient norm^2
    weighted_excess: np.ndarray  # (steps,) sum_i alpha_i (loss_i - optimum_i)
    optimum_losses: np.ndarray  # (m,)
    w_shared: np.ndarray
    offsets: np.ndarray | None


def run_shared_linear(
    tasks: list[LinearTask],
    eta_theta: float,
    eta_alpha: float,
    steps: int,
    strategy: StrategyKind = StrategyKind.EXCESS,
    task_offsets: bool = False,
    warmup_steps: int = 0,
    normalize_excess: bool = False,
    eta_decay: bool = False,
    w0: np.ndarray | None = None,
) -> ConvexRunResult:
    """Full-batch run of the weighting algorithm on the convex problem."""
    m = len(tasks)
    if m < 2:
        raise ConfigError("need at least two tasks")
    d = tasks[0].x.shape[1]
    if any(t.x.shape[1] != d for t in tasks):
        raise ConfigError("tasks must share the input dimension")

    w = np.zeros(d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    offsets = np.zeros((m, d)) if task_offsets else None
    strat = weighting.make_strategy(
        strategy, m, shared_dim=d, eta_alpha=eta_alpha,
        warmup_steps=warmup_steps, normalize_excess=normalize_excess,
    )
    optimum = np.array([least_squares_optimum(t)[1] for t in tasks])

    alphas = np.empty((steps, m))
    losses = np.empty((steps, m))
    gaps = np.empty(steps)
    weighted_excess = np.empty(steps)

    for t in range(1, steps + 1):
        grads = []
        for i, task in enumerate(tasks):
            wi = w if offsets is None else w + offsets[i]
            losses[t - 1, i] = task_loss(task, wi)
            grads.append(task_grad(task, wi))
        scale = 1.0 / math.sqrt(t) if eta_decay else 1.0
        obs = TaskObservations(losses=losses[t - 1].copy(), shared_grads=grads)
        weights, _ = weighting.strategy_step(strat, obs, eta_scale=scale)
        eta = eta_theta * scale
        if offsets is not None:
            for i in range(m):
                offsets[i] -= eta * grads[i]
        gaps[t - 1] = stationarity_gap(grads, weights.alpha)
        mix = np.zeros(d)
        for a, g in zip(weights.alpha, grads):
            mix += a * g
        w -= eta * mix
        alphas[t - 1] = weights.alpha
        weighted_excess[t - 1] = float(weights.alpha @ (losses[t - 1] - optimum))

    return ConvexRunResult(
        alphas=alphas,
        losses=losses,
        gaps=gaps,
        weighted_excess=weighted_excess,
        optimum_losses=optimum,
        w_shared=w,
        offsets=offsets,
    )


def running_min_loglog_slope(values: np.ndarray, t_lo: int, t_hi: int) -> float:
    """Least-squares slope of log(running min) against log(step index).

    Steps are 1-based; the fit window is [t_lo, t_hi] inclusive.
    """
    values = np.asarray(values, dtype=np.float64)
    run_min = np.minimum.accumulate(values)
    window = run_min[t_lo - 1:t_hi]
    t = np.arange(t_lo, t_lo + window.shape[0], dtype=np.float64)
    window = np.maximum(window, 1e-290)  # guard the log against exact zeros
    slope, _ = np.polyfit(np.log(t), np.log(window), 1)
    return float(slope)
