"""Label-noise injection for training splits.

Classification: symmetric flips, i.e. each corrupted label is redrawn
uniformly over all classes (the original label may come back). Regression:
additive Gaussian noise whose per-column variance equals the column's own
variance. The noise level is the fraction of training rows corrupted; rows
are picked without replacement via a seeded shuffle so the corrupted count
is exact. Test data is never touched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, TargetError


class NoiseKind(Enum):
    SYMMETRIC_FLIP = "symmetric_flip"
    ADDITIVE_GAUSSIAN = "additive_gaussian"


@dataclass(frozen=True)
class NoiseSpec:
    """Which task to corrupt, how, how much, and with which seed."""

    task_id: int
    kind: NoiseKind
    level: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ConfigError(f"noise level must be in [0, 1], got {self.level}")
        if self.task_id < 0:
            raise ConfigError("noise task_id must be >= 0")


def selected_row_count(n: int, level: float) -> int:
    """Number of corrupted rows: level*n rounded to nearest."""
    if not 0.0 <= level <= 1.0:
        raise ConfigError(f"noise level must be in [0, 1], got {level}")
    return int(math.floor(level * n + 0.5))


def _selection(rng: np.random.Generator, n: int, level: float) -> np.ndarray:
    return rng.permutation(n)[: selected_row_count(n, level)]


def select_rows(n: int, level: float, seed: int) -> np.ndarray:
    """The exact row set an injector with this seed corrupts."""
    return _selection(np.random.default_rng(seed), n, level)


def inject_symmetric_flip(labels, num_classes: int, level: float, seed: int) -> np.ndarray:
    """Redraw the labels of a seeded random row subset uniformly over all classes."""
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise TargetError("labels must be integers")
    if num_classes < 2:
        raise ConfigError("symmetric flips need num_classes >= 2")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise TargetError(f"labels must lie in [0, {num_classes})")
    rng = np.random.default_rng(seed)
    rows = _selection(rng, labels.shape[0], level)
    out = labels.copy()
    out[rows] = rng.integers(0, num_classes, size=rows.shape[0])
    return out


def inject_gaussian(targets, level: float, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise, variance matched per column, to selected rows."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[0] == 0:
        raise ConfigError("targets must be a nonempty (n, k) matrix")
    variance = targets.var(axis=0)
    if np.any(variance == 0.0):
        bad = int(np.argmin(variance))
        raise ConfigError(f"target column {bad} has zero variance; noise undefined")
    rng = np.random.default_rng(seed)
    rows = _selection(rng, targets.shape[0], level)
    out = targets.copy()
    out[rows] += rng.standard_normal((rows.shape[0], targets.shape[1])) * np.sqrt(variance)
    return out


def apply_noise(datasets, specs, num_classes: int | None = None) -> list:
    """Corrupt the train split of the named tasks; test splits pass through untouched.

    num_classes covers flip tasks; when absent it is inferred as max label + 1.
    """
    from .data import TaskData, TaskDataset  # local import: data does not need noise

    out = list(datasets)
    for spec in specs:
        if not 0 <= spec.task_id < len(out):
            raise ConfigError(f"noise task_id {spec.task_id} out of range")
        td = out[spec.task_id]
        if spec.kind is NoiseKind.SYMMETRIC_FLIP:
            k = num_classes
            if k is None:
                k = int(max(td.train.y.max(), td.test.y.max())) + 1
            noisy = inject_symmetric_flip(td.train.y, k, spec.level, spec.seed)
        else:
            noisy = inject_gaussian(td.train.y, spec.level, spec.seed)
        out[spec.task_id] = TaskData(
            train=TaskDataset(td.train.x, noisy, td.train.split),
            test=td.test,
        )
    return out
