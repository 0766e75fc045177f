"""Task-weighting strategies behind one interface.

Excess-risk weighting estimates each task's distance to convergence as
g' diag(sum_tau g g')^(-1/2) g over the shared parameters (the accumulated
elementwise squared gradients act as a diagonal curvature surrogate), then
takes a multiplicative step on the simplex. Baselines: uniform weights,
loss-driven multiplicative weights, and min-norm weights over the convex
hull of task gradients.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError, NumericsError

FISHER_EPS = 1e-12  # guards division when an accumulator coordinate is exactly zero
_ALPHA_FLOOR = 1e-300  # keeps materialized weights strictly positive under underflow
_SCALAR_PATH_MAX = 8  # below this, numpy per-call overhead dominates float math

MGDA_GAP_TOL = 1e-8
MGDA_MAX_ITERS = 250
MGDA_EXACT_MAX_TASKS = 12  # support enumeration is 2^m; plenty for desk scale


class StrategyKind(Enum):
    EXCESS = "excess"
    UNIFORM = "uniform"
    GROUPDRO = "groupdro"
    MGDA = "mgda"


@dataclass
class WeightState:
    """Task weights on the simplex plus the weight step size.

    log_alpha carries the unnormalized log weights; updates run in log space
    so extreme payoff sequences cannot overflow or drive a weight to exact 0.
    """

    alpha: np.ndarray
    eta_alpha: float
    step: int = 0
    log_alpha: np.ndarray = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1 or self.alpha.shape[0] < 1:
            raise DimensionError("alpha must be a nonempty vector")
        if np.any(self.alpha <= 0.0):
            raise ConfigError("weights must be strictly positive")
        if abs(self.alpha.sum() - 1.0) > 1e-9:
            raise ConfigError("weights must sum to 1")
        if self.eta_alpha <= 0.0:
            raise ConfigError("eta_alpha must be > 0")
        if self.log_alpha is None:
            self.log_alpha = np.log(self.alpha)

    @classmethod
    def uniform(cls, num_tasks: int, eta_alpha: float) -> "WeightState":
        return cls(np.full(num_tasks, 1.0 / num_tasks), eta_alpha)

    @classmethod
    def _trusted(cls, alpha, eta_alpha, step, log_alpha) -> "WeightState":
        # update fast path: invariants hold by construction, skip validation
        obj = object.__new__(cls)
        obj.alpha = alpha
        obj.eta_alpha = eta_alpha
        obj.step = step
        obj.log_alpha = log_alpha
        return obj


@dataclass
class FisherAccumulator:
    """Per-task running sums of elementwise squared shared gradients."""

    per_task: list[np.ndarray]
    steps: int = 0

    @classmethod
    def zeros(cls, num_tasks: int, dim: int) -> "FisherAccumulator":
        return cls([np.zeros(dim) for _ in range(num_tasks)])


@dataclass
class ExcessEstimate:
    """Per-task raw and scale-normalized excess-risk estimates.

    initial holds the warm-up average used as normalization baseline; relative
    is raw/initial clamped to [0, 1] and stays zero while warm-up runs.
    """

    raw: np.ndarray
    initial: np.ndarray
    relative: np.ndarray

    @classmethod
    def zeros(cls, num_tasks: int) -> "ExcessEstimate":
        return cls(np.zeros(num_tasks), np.zeros(num_tasks), np.zeros(num_tasks))


def accumulate_fisher(acc: FisherAccumulator, task: int, g) -> FisherAccumulator:
    """Add g*g elementwise to the task's accumulator. Mutates and returns acc."""
    g = np.asarray(g, dtype=np.float64)
    slot = acc.per_task[task]
    if g.shape != slot.shape:
        raise DimensionError(f"gradient shape {g.shape} != accumulator {slot.shape}")
    slot += g * g
    return acc


def estimate_excess_fisher(g, acc_task, eps: float = FISHER_EPS) -> float:
    """sum_j g_j^2 / (sqrt(acc_j) + eps); acc_task already includes g's term.

    With a single accumulated step and eps = 0 this reduces exactly to the L1
    norm of g. The 1/2 of the exact quadratic form is dropped here.
    """
    g = np.asarray(g, dtype=np.float64)
    acc_task = np.asarray(acc_task, dtype=np.float64)
    if g.shape != acc_task.shape:
        raise DimensionError(f"gradient shape {g.shape} != accumulator {acc_task.shape}")
    if eps < 0.0:
        raise ConfigError("eps must be >= 0")
    denom = np.sqrt(acc_task) + eps
    num = g * g
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0.0)
    return float(terms.sum())


def estimate_excess_exact(g, h) -> float:
    """0.5 * g' H^-1 g via a direct solve; H must be symmetric positive definite."""
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] != g.shape[0]:
        raise DimensionError(f"H must be square matching g: {h.shape} vs {g.shape}")
    if not np.allclose(h, h.T, rtol=1e-10, atol=1e-12):
        raise NumericsError("H is not symmetric")
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"H is not positive definite: {exc}") from exc
    u = np.linalg.solve(chol, g)
    return float(0.5 * (u @ u))


def _multiplicative(w: WeightState, payoff: np.ndarray, eta_scale: float) -> WeightState:
    eta = w.eta_alpha * eta_scale
    m = w.alpha.shape[0]
    if m <= _SCALAR_PATH_MAX:
        la = w.log_alpha.tolist()
        pay = payoff.tolist()
        z = [la[i] + eta * pay[i] for i in range(m)]
        shift = max(z)
        z = [v - shift for v in z]  # max-shift: exp never overflows
        a = [math.exp(v) for v in z]
        total = sum(a)
        alpha = [v / total for v in a]
        if min(alpha) < _ALPHA_FLOOR:  # underflow guard: no zeros, no denormals
            alpha = [v if v > _ALPHA_FLOOR else _ALPHA_FLOOR for v in alpha]
            total = sum(alpha)
            alpha = [v / total for v in alpha]
        return WeightState._trusted(
            np.asarray(alpha), w.eta_alpha, w.step + 1, np.asarray(z)
        )
    z = w.log_alpha + eta * payoff
    z -= z.max()
    a = np.exp(z)
    alpha = a / a.sum()
    if alpha.min() < _ALPHA_FLOOR:
        np.maximum(alpha, _ALPHA_FLOOR, out=alpha)
        alpha /= alpha.sum()
    return WeightState._trusted(alpha, w.eta_alpha, w.step + 1, z)


def update_weights_multiplicative(w: WeightState, excess, eta_scale: float = 1.0) -> WeightState:
    """alpha_i <- alpha_i * exp(eta_alpha * excess_i), then normalize to sum 1.

    Closed form of a KL-regularized ascent step on the weighted excess risks.
    """
    excess = np.asarray(excess, dtype=np.float64)
    if excess.shape != w.alpha.shape:
        raise DimensionError(f"excess length {excess.shape} != weights {w.alpha.shape}")
    if not math.isfinite(float(excess.sum())):  # NaN or inf anywhere poisons the sum
        raise NumericsError("excess estimates must be finite")
    return _multiplicative(w, excess, eta_scale)


def groupdro_update(w: WeightState, losses, eta_scale: float = 1.0) -> WeightState:
    """Same exponentiated form, driven by raw task losses."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != w.alpha.shape:
        raise DimensionError(f"loss length {losses.shape} != weights {w.alpha.shape}")
    if not math.isfinite(float(losses.sum())):
        raise NumericsError("losses must be finite")
    return _multiplicative(w, losses, eta_scale)


def scale_process(raw, est: ExcessEstimate, warmup_done: bool) -> np.ndarray:
    """Relative excess raw/initial clamped to [0, 1]; zeros while warming up."""
    raw = np.asarray(raw, dtype=np.float64)
    est.raw = raw.copy()
    if not warmup_done:
        est.relative = np.zeros_like(raw)
        return est.relative.copy()
    if np.any(est.initial <= 0.0):
        bad = int(np.argmin(est.initial))
        raise ConfigError(
            f"task {bad} has zero initial excess after warm-up (degenerate task)"
        )
    est.relative = np.clip(raw / est.initial, 0.0, 1.0)
    return est.relative.copy()


def _min_norm_pair(u: np.ndarray, v: np.ndarray) -> float:
    """gamma in [0, 1] minimizing ||gamma*u + (1-gamma)*v||^2."""
    d = u - v
    dd = float(d @ d)
    if dd == 0.0:
        return 0.5
    return float(np.clip(((v - u) @ v) / dd, 0.0, 1.0))


def _exact_min_norm(gram: np.ndarray) -> np.ndarray | None:
    """Exact min-norm weights via KKT solves over candidate supports.

    On a support S the stationarity condition is gram[S,S] a proportional to
    ones; a candidate is feasible when the normalized solution is nonnegative
    and globally optimal when every coordinate of gram @ alpha is >= the
    attained value.
    """
    m = gram.shape[0]
    best_alpha, best_value = None, np.inf
    for mask in range(1, 1 << m):
        idx = [i for i in range(m) if mask >> i & 1]
        sub = gram[np.ix_(idx, idx)]
        try:
            a = np.linalg.solve(sub, np.ones(len(idx)))
        except np.linalg.LinAlgError:
            continue
        total = a.sum()
        if total <= 0.0 or np.any(a < 0.0):
            continue
        alpha = np.zeros(m)
        alpha[idx] = a / total
        value = float(alpha @ gram @ alpha)
        if float((gram @ alpha).min()) < value - 1e-9 * max(1.0, value):
            continue
        if value < best_value:
            best_value, best_alpha = value, alpha
    return best_alpha


def mgda_weights(grads) -> np.ndarray:
    """Weights minimizing ||sum_i alpha_i g_i||^2 over the simplex.

    Two tasks use the closed-form clipped line search; more tasks run
    away-step Frank-Wolfe to duality gap < 1e-8 (capped at 250 iterations),
    with an exact support-enumeration polish when an ill-conditioned instance
    exhausts the iteration budget short of the gap target. All-zero or
    identical gradients return uniform weights.
    """
    gs = [np.asarray(g, dtype=np.float64) for g in grads]
    m = len(gs)
    if m < 2:
        raise DimensionError("min-norm weights need at least two gradients")
    dim = gs[0].shape
    if any(g.shape != dim for g in gs):
        raise DimensionError("gradients must share one length")
    g_mat = np.stack(gs)
    gram = g_mat @ g_mat.T
    if not np.any(gram):
        return np.full(m, 1.0 / m)

    if m == 2:
        gamma = _min_norm_pair(gs[0], gs[1])
        return np.array([gamma, 1.0 - gamma])

    # away-step Frank-Wolfe with exact line search: the plain variant zigzags
    # when the min-norm point sits on a simplex face and misses the gap target
    alpha = np.full(m, 1.0 / m)
    for _ in range(MGDA_MAX_ITERS):
        grad = gram @ alpha
        k = int(np.argmin(grad))
        value = float(alpha @ grad)
        gap = 2.0 * (value - float(grad[k]))
        if gap < MGDA_GAP_TOL:
            break
        active = np.flatnonzero(alpha > 0.0)
        away = int(active[np.argmax(grad[active])])
        away_gap = 2.0 * (float(grad[away]) - value)
        if gap >= away_gap:
            d = -alpha.copy()
            d[k] += 1.0
            step_max = 1.0
        else:
            d = alpha.copy()
            d[away] -= 1.0
            denom = 1.0 - alpha[away]
            step_max = alpha[away] / denom if denom > 0.0 else 0.0
        curv = float(d @ gram @ d)
        if curv <= 0.0 or step_max <= 0.0:
            break
        step = float(np.clip(-(d @ gram @ alpha) / curv, 0.0, step_max))
        if step == 0.0:
            break
        alpha = alpha + step * d
    alpha = np.clip(alpha, 0.0, None)
    alpha = alpha / alpha.sum()

    grad = gram @ alpha
    residual_gap = 2.0 * float(alpha @ grad - grad.min())
    if residual_gap >= MGDA_GAP_TOL and m <= MGDA_EXACT_MAX_TASKS:
        exact = _exact_min_norm(gram)
        if exact is not None and float(exact @ gram @ exact) <= float(alpha @ grad):
            alpha = exact
    return alpha


@dataclass
class TaskObservations:
    """Per-step observations a strategy may consume."""

    losses: np.ndarray | None = None
    shared_grads: list[np.ndarray] | None = None


@dataclass
class StrategyState:
    """Single-owner state for one weighting strategy across a run."""

    kind: StrategyKind
    weights: WeightState
    fisher: FisherAccumulator | None = None
    estimate: ExcessEstimate | None = None
    warmup_steps: int = 0
    normalize_excess: bool = True
    eps: float = FISHER_EPS
    warmup_sum: np.ndarray | None = None
    warmup_seen: int = 0
    steps_done: int = 0

    @property
    def num_tasks(self) -> int:
        return self.weights.alpha.shape[0]


def make_strategy(
    kind: StrategyKind,
    num_tasks: int,
    shared_dim: int,
    eta_alpha: float,
    warmup_steps: int = 0,
    normalize_excess: bool = True,
) -> StrategyState:
    state = StrategyState(
        kind=kind,
        weights=WeightState.uniform(num_tasks, eta_alpha),
        warmup_steps=warmup_steps,
        normalize_excess=normalize_excess,
    )
    if kind is StrategyKind.EXCESS:
        state.fisher = FisherAccumulator.zeros(num_tasks, shared_dim)
        state.estimate = ExcessEstimate.zeros(num_tasks)
        state.warmup_sum = np.zeros(num_tasks)
    return state


def _require(obs: TaskObservations, field_name: str, kind: StrategyKind):
    value = getattr(obs, field_name)
    if value is None:
        raise ConfigError(f"strategy {kind.value} requires observation field {field_name!r}")
    return value


def _excess_step(state: StrategyState, obs: TaskObservations, eta_scale: float) -> dict:
    grads = _require(obs, "shared_grads", state.kind)
    m = state.num_tasks
    if len(grads) != m:
        raise DimensionError(f"expected {m} gradients, got {len(grads)}")
    raw = np.empty(m)
    for i in range(m):
        accumulate_fisher(state.fisher, i, grads[i])  # sum runs to the current step
        raw[i] = estimate_excess_fisher(grads[i], state.fisher.per_task[i], state.eps)
    state.fisher.steps += 1

    in_warmup = state.steps_done < state.warmup_steps
    if in_warmup:
        state.warmup_sum += raw
        state.warmup_seen += 1
        drive = scale_process(raw, state.estimate, warmup_done=False)
    else:
        if state.warmup_seen and state.estimate.initial.max() == 0.0:
            state.estimate.initial = state.warmup_sum / state.warmup_seen
        if state.normalize_excess:
            if not state.warmup_seen:
                # no warm-up configured: fall back to the first observed values
                state.estimate.initial = raw.copy()
                state.warmup_seen = 1
            drive = scale_process(raw, state.estimate, warmup_done=True)
        else:
            state.estimate.raw = raw.copy()
            state.estimate.relative = np.zeros(m)
            drive = raw
    state.weights = update_weights_multiplicative(state.weights, drive, eta_scale)
    return {
        "raw_excess": [float(v) for v in raw],
        "relative_excess": [float(v) for v in state.estimate.relative],
    }


def strategy_step(
    state: StrategyState, obs: TaskObservations, eta_scale: float = 1.0
) -> tuple[WeightState, dict]:
    """One outer-iteration weight update; returns the new weights and diagnostics.

    Diagnostics always carry step, alpha, raw_excess and relative_excess
    (null when a strategy does not produce them), plus per-strategy extras.
    """
    extras: dict = {"raw_excess": None, "relative_excess": None}
    if state.kind is StrategyKind.EXCESS:
        extras = _excess_step(state, obs, eta_scale)
    elif state.kind is StrategyKind.UNIFORM:
        m = state.num_tasks
        state.weights = WeightState(
            np.full(m, 1.0 / m), state.weights.eta_alpha, state.weights.step + 1
        )
    elif state.kind is StrategyKind.GROUPDRO:
        losses = np.asarray(_require(obs, "losses", state.kind), dtype=np.float64)
        state.weights = groupdro_update(state.weights, losses, eta_scale)
        extras["losses"] = [float(v) for v in losses]
    elif state.kind is StrategyKind.MGDA:
        grads = _require(obs, "shared_grads", state.kind)
        alpha = mgda_weights(grads)
        direction = sum(a * g for a, g in zip(alpha, grads))
        # fresh stateless weights each step, per the min-norm definition
        state.weights = WeightState(
            np.maximum(alpha, _ALPHA_FLOOR) / np.maximum(alpha, _ALPHA_FLOOR).sum(),
            state.weights.eta_alpha,
            state.weights.step + 1,
        )
        extras["min_norm_sq"] = float(direction @ direction)
    else:  # pragma: no cover
        raise ConfigError(f"unknown strategy {state.kind}")
    state.steps_done += 1

    diag = {
        "step": state.weights.step,
        "alpha": [float(a) for a in state.weights.alpha],
        "raw_excess": extras.pop("raw_excess", None),
        "relative_excess": extras.pop("relative_excess", None),
    }
    diag.update(extras)
    return state.weights, diag


def diagnostics_json(diag: dict) -> str:
    """One JSON line for the diagnostics stream."""
    ordered = {
        "step": diag["step"],
        "alpha": diag["alpha"],
        "raw_excess": diag.get("raw_excess"),
        "relative_excess": diag.get("relative_excess"),
    }
    for key, value in diag.items():
        if key not in ordered:
            ordered[key] = value
    return json.dumps(ordered)
