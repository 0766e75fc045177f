"""Shared-trunk MLP with per-task heads and closed-form backpropagation.

The architecture is fixed: every trunk layer is affine followed by a rectifier,
heads are affine with no activation. Losses are batch means, so the step size
does not depend on batch size. The rectifier subgradient at exactly 0 is 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, InputError, TargetError
from .numcore import SHARED, ParamPartition, ViewSpec


class LossKind(Enum):
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    SQUARED_ERROR = "squared_error"


@dataclass(frozen=True)
class ModelSpec:
    """Trunk widths plus one (output_dim, loss) pair per task head.

    Trainers require at least two heads; a single head is allowed here only so
    degenerate single-task reductions can be exercised in tests.
    """

    input_dim: int
    trunk_layers: tuple[int, ...]
    task_heads: tuple[tuple[int, LossKind], ...]
    activation: str = "relu"  # fixed; recorded for config echoes

    def __post_init__(self):
        object.__setattr__(self, "trunk_layers", tuple(int(w) for w in self.trunk_layers))
        object.__setattr__(
            self, "task_heads", tuple((int(d), k) for d, k in self.task_heads)
        )
        if self.input_dim < 1:
            raise DimensionError("input_dim must be >= 1")
        if len(self.trunk_layers) < 1:
            raise DimensionError("at least one trunk layer is required")
        if any(w < 1 for w in self.trunk_layers):
            raise DimensionError("trunk widths must be >= 1")
        if len(self.task_heads) < 1:
            raise DimensionError("at least one task head is required")
        if any(d < 1 for d, _ in self.task_heads):
            raise DimensionError("head output dims must be >= 1")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    @property
    def num_tasks(self) -> int:
        return len(self.task_heads)


@dataclass
class GradientBundle:
    """Batch-mean loss and its exact gradients for one task."""

    task_id: int
    shared_grad: np.ndarray
    head_grad: np.ndarray
    loss_value: float


def _trunk_widths(spec: ModelSpec) -> list[int]:
    return [spec.input_dim] + list(spec.trunk_layers)


def init_params(spec: ModelSpec, seed: int, allow_single_task: bool = False) -> ParamPartition:
    """He-scaled Gaussian weights, zero biases, drawn from one seeded stream."""
    rng = np.random.default_rng(seed)
    widths = _trunk_widths(spec)
    views: list[ViewSpec] = []

    shared_parts = []
    offset = 0
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        views.append(ViewSpec(f"trunk.{layer}.w", SHARED, offset, (fan_out, fan_in)))
        offset += fan_out * fan_in
        views.append(ViewSpec(f"trunk.{layer}.b", SHARED, offset, (fan_out,)))
        offset += fan_out
        shared_parts += [w.ravel(), b]
    shared = np.concatenate(shared_parts)

    per_task = []
    feat = widths[-1]
    for i, (out_dim, _) in enumerate(spec.task_heads):
        w = rng.standard_normal((out_dim, feat)) * np.sqrt(2.0 / feat)
        b = np.zeros(out_dim)
        views.append(ViewSpec(f"head.{i}.w", i, 0, (out_dim, feat)))
        views.append(ViewSpec(f"head.{i}.b", i, out_dim * feat, (out_dim,)))
        per_task.append(np.concatenate([w.ravel(), b]))

    return ParamPartition(shared, per_task, views, allow_single_task=allow_single_task)


def _check_input(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(
            f"input batch must be (n, {spec.input_dim}), got {x.shape}"
        )
    return x


def _forward_cached(p: ParamPartition, spec: ModelSpec, x: np.ndarray, task: int):
    """Forward pass keeping per-layer pre-activations and activations."""
    h = x
    pre = []
    acts = [x]
    for layer in range(len(spec.trunk_layers)):
        w = p.view(f"trunk.{layer}.w")
        b = p.view(f"trunk.{layer}.b")
        z = h @ w.T + b
        h = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(h)
    wh = p.view(f"head.{task}.w")
    bh = p.view(f"head.{task}.b")
    out = h @ wh.T + bh
    return out, pre, acts


def forward(p: ParamPartition, spec: ModelSpec, x, task: int) -> np.ndarray:
    """Predictions for one task: rectified trunk, then an affine head."""
    x = _check_input(spec, x)
    if not 0 <= task < spec.num_tasks:
        raise IndexError(f"task {task} out of range for {spec.num_tasks} heads")
    out, _, _ = _forward_cached(p, spec, x, task)
    return out


def _cross_entropy(logits: np.ndarray, y: np.ndarray):
    n, k = logits.shape
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionError(f"labels must be ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise TargetError("cross-entropy targets must be integer class labels")
    if y.min(initial=0) < 0 or y.max(initial=0) >= k:
        raise TargetError(f"class labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, dlogits


def _squared_error(pred: np.ndarray, y: np.ndarray):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != pred.shape:
        raise DimensionError(f"targets must be {pred.shape}, got {y.shape}")
    r = pred - y
    n = pred.shape[0]
    # per-example sum over output dims, mean over the batch
    loss = float((r * r).sum() / n)
    return loss, 2.0 * r / n


def loss_and_grad(p: ParamPartition, spec: ModelSpec, batch, task: int) -> GradientBundle:
    """Batch-mean loss and exact analytic gradients w.r.t. trunk and head."""
    x, y = batch
    x = _check_input(spec, x)
    if x.shape[0] == 0:
        raise InputError("empty batch")
    out_dim, kind = spec.task_heads[task]

    pred, pre, acts = _forward_cached(p, spec, x, task)
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        loss, dpred = _cross_entropy(pred, y)
    else:
        loss, dpred = _squared_error(pred, y)

    wh = p.view(f"head.{task}.w")
    dwh = dpred.T @ acts[-1]
    dbh = dpred.sum(axis=0)
    head_grad = np.concatenate([dwh.ravel(), dbh])

    dh = dpred @ wh
    trunk_grads = []
    for layer in range(len(spec.trunk_layers) - 1, -1, -1):
        w = p.view(f"trunk.{layer}.w")
        dz = dh * (pre[layer] > 0.0)
        dw = dz.T @ acts[layer]
        db = dz.sum(axis=0)
        trunk_grads.append((dw, db))
        dh = dz @ w
    shared_parts = []
    for dw, db in reversed(trunk_grads):
        shared_parts += [dw.ravel(), db]
    shared_grad = np.concatenate(shared_parts)

    return GradientBundle(task, shared_grad, head_grad, loss)


def pareto_dominates(loss_a, loss_b) -> bool:
    """True iff loss_a <= loss_b elementwise and the profiles differ."""
    a = np.asarray(loss_a, dtype=np.float64)
    b = np.asarray(loss_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"loss profiles must match: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))
