"""Flat parameter storage with named views, plus the small dense-algebra helpers.

Everything is float64. Matrices are 2-D row-major numpy arrays; vectors are
1-D. A ParamPartition holds one flat vector of shared trunk parameters and one
flat vector per task head; named views reshape windows of those vectors without
copying, so writes through a view mutate the underlying flat storage.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

Vector = np.ndarray  # 1-D float64
Matrix = np.ndarray  # 2-D float64, row-major

SHARED = -1  # view-owner tag for the shared vector


def as_vector(x) -> Vector:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(m) -> Matrix:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return np.ascontiguousarray(a)


def dense_matrix(rows: int, cols: int, data) -> Matrix:
    """Matrix from row-major flat data; the length must be rows * cols."""
    flat = as_vector(data)
    if flat.shape[0] != rows * cols:
        raise DimensionError(
            f"need {rows * cols} entries for a {rows}x{cols} matrix, got {flat.shape[0]}"
        )
    return flat.reshape(rows, cols)


def axpy(alpha: float, x, y) -> Vector:
    """alpha*x + y, elementwise."""
    x = as_vector(x)
    y = as_vector(y)
    if x.shape != y.shape:
        raise DimensionError(f"axpy length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return alpha * x + y


def matvec(m, x) -> Vector:
    """Matrix-vector product M @ x."""
    m = as_matrix(m)
    x = as_vector(x)
    if m.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec shape mismatch: {m.shape} @ ({x.shape[0]},)")
    return m @ x


@dataclass(frozen=True)
class ViewSpec:
    """Named (owner, offset, shape) window into one of the flat vectors.

    owner is SHARED for the trunk vector, otherwise a task index.
    """

    name: str
    owner: int
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= int(s)
        return n


class ParamPartition:
    """Shared-trunk / per-task parameter store with write-through named views.

    Views must tile each flat vector exactly: sorted by offset they are
    contiguous, gap-free and cover the whole vector.
    """

    def __init__(self, shared, per_task, views, allow_single_task: bool = False):
        self.shared = as_vector(shared)
        self.per_task = [as_vector(t) for t in per_task]
        if len(self.per_task) < 2 and not allow_single_task:
            raise DimensionError("a partition needs at least two task vectors")
        self._views: dict[str, ViewSpec] = {}
        for v in views:
            if v.name in self._views:
                raise ValueError(f"duplicate view name {v.name!r}")
            if not (v.owner == SHARED or 0 <= v.owner < len(self.per_task)):
                raise ValueError(f"view {v.name!r} references unknown owner {v.owner}")
            self._views[v.name] = v
        self._check_tiling()

    @property
    def num_tasks(self) -> int:
        return len(self.per_task)

    def _flat(self, owner: int) -> Vector:
        return self.shared if owner == SHARED else self.per_task[owner]

    def _check_tiling(self) -> None:
        for owner in [SHARED] + list(range(len(self.per_task))):
            windows = sorted(
                (v for v in self._views.values() if v.owner == owner),
                key=lambda v: v.offset,
            )
            expect = 0
            for v in windows:
                if v.offset != expect:
                    raise ValueError(
                        f"view {v.name!r} starts at {v.offset}, expected {expect}"
                        " (views must tile with no gap or overlap)"
                    )
                expect = v.offset + v.size
            total = self._flat(owner).shape[0]
            if expect != total:
                raise ValueError(
                    f"views cover {expect} of {total} entries for owner {owner}"
                )

    def view(self, name: str) -> np.ndarray:
        """Reshaped window; writes through to the flat vector."""
        try:
            v = self._views[name]
        except KeyError:
            raise KeyError(f"unknown view {name!r}") from None
        flat = self._flat(v.owner)
        return flat[v.offset:v.offset + v.size].reshape(v.shape)

    def view_specs(self) -> list[ViewSpec]:
        return list(self._views.values())

    def view_names(self) -> list[str]:
        return list(self._views)

    def clone(self) -> "ParamPartition":
        return ParamPartition(
            self.shared.copy(),
            [t.copy() for t in self.per_task],
            list(self._views.values()),
            allow_single_task=len(self.per_task) < 2,
        )


def view_as_matrix(p: ParamPartition, view_name: str) -> np.ndarray:
    """Named slice of a flat vector, reshaped; read-write view semantics."""
    return p.view(view_name)
