"""Dataset acquisition: synthetic generators, IDX reader, two-digit canvases,
and standardization.

Synthetic tasks share one input matrix and differ only in their labeling
functions, so learning a shared trunk is meaningful. Splits are 80/20 with the
train rows first. Standardization statistics always come from the train split.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, IdxFormatError


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class TaskDataset:
    """One split of one task: inputs plus integer labels or real targets."""

    x: np.ndarray
    y: np.ndarray
    split: Split

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )


@dataclass
class TaskData:
    """Train and test splits for one task."""

    train: TaskDataset
    test: TaskDataset


def train_rows(n: int) -> int:
    """80/20 split point, rounded to nearest."""
    return int(math.floor(0.8 * n + 0.5))


def _split_task(x: np.ndarray, y: np.ndarray) -> TaskData:
    cut = train_rows(x.shape[0])
    return TaskData(
        train=TaskDataset(x[:cut], y[:cut], Split.TRAIN),
        test=TaskDataset(x[cut:], y[cut:], Split.TEST),
    )


def gen_synthetic_classification(
    num_tasks: int, classes: int, dim: int, n: int, separation: float, seed: int
) -> list[TaskData]:
    """Gaussian class clusters in per-task random subspaces of a shared input.

    Each task draws its own latent class labels; class prototypes sit
    `separation` apart (pairwise) inside that task's random frame, and unit
    Gaussian noise covers every coordinate. With large separation a linear
    probe recovers each task's labels almost perfectly.
    """
    if min(num_tasks, classes, dim, n) < 1:
        raise ConfigError("num_tasks, classes, dim and n must be >= 1")
    if classes < 2:
        raise ConfigError("classification needs at least 2 classes")
    if separation <= 0:
        raise ConfigError("separation must be > 0")
    rng = np.random.default_rng(seed)

    width = num_tasks * classes
    raw = rng.standard_normal((dim, width))
    if dim >= width:
        frame, _ = np.linalg.qr(raw)  # orthonormal columns: task subspaces disjoint
    else:
        frame = raw / np.linalg.norm(raw, axis=0, keepdims=True)

    labels = [rng.integers(0, classes, size=n) for _ in range(num_tasks)]
    scale = separation / math.sqrt(2.0)  # one-hot prototypes end up `separation` apart
    x = rng.standard_normal((n, dim))
    for i in range(num_tasks):
        sub = frame[:, i * classes:(i + 1) * classes]
        onehot = np.zeros((n, classes))
        onehot[np.arange(n), labels[i]] = scale
        x = x + onehot @ sub.T

    return [_split_task(x, labels[i]) for i in range(num_tasks)]


def gen_synthetic_regression(
    num_tasks: int,
    dim: int,
    n: int,
    noise_std: float,
    seed: int,
    weight_scale: float = 1.0,
) -> list[TaskData]:
    """Per-task linear targets w_i . x + b_i + eps over a shared input."""
    if min(num_tasks, dim, n) < 1:
        raise ConfigError("num_tasks, dim and n must be >= 1")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    out = []
    for _ in range(num_tasks):
        w = weight_scale * rng.standard_normal(dim)
        b = rng.standard_normal()
        y = (x @ w + b + noise_std * rng.standard_normal(n)).reshape(n, 1)
        out.append(_split_task(x, y))
    return out


IDX_UNSIGNED_BYTE = 0x08


def read_idx(path) -> np.ndarray:
    """Parse an IDX container (big-endian) into a uint8 array.

    Layout: bytes 0-1 are zero, byte 2 is the element type (only 0x08 unsigned
    byte is supported), byte 3 is the dimension count; then one big-endian
    32-bit size per dimension, then the payload.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise IdxFormatError(f"truncated header: {len(blob)} bytes at offset 0")
    if blob[0] != 0 or blob[1] != 0:
        raise IdxFormatError(f"bad magic bytes {blob[0]:#04x} {blob[1]:#04x} at offset 0")
    if blob[2] != IDX_UNSIGNED_BYTE:
        raise IdxFormatError(f"unsupported element type {blob[2]:#04x} at offset 2")
    ndim = blob[3]
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxFormatError(
            f"truncated dimension list: expected {header_len} header bytes, "
            f"got {len(blob)} (offset {len(blob)})"
        )
    dims = struct.unpack(f">{ndim}I", blob[4:header_len]) if ndim else ()
    expected = 1
    for d in dims:
        expected *= d
    payload = blob[header_len:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"payload length mismatch at offset {header_len}: "
            f"expected {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array) -> None:
    """Inverse of read_idx for uint8 arrays (test fixtures and round trips)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, IDX_UNSIGNED_BYTE, a.ndim])
    header += struct.pack(f">{a.ndim}I", *a.shape) if a.ndim else b""
    Path(path).write_bytes(header + a.tobytes())


def compose_multimnist(
    images_a,
    labels_a,
    images_b,
    labels_b,
    n_pairs: int | None = None,
    canvas: int = 36,
    seed: int = 0,
    split: Split = Split.TRAIN,
) -> tuple[TaskDataset, TaskDataset]:
    """Overlay two digit sets on a canvas: first at the top-left, second at the
    bottom-right, pixelwise maximum where they overlap.

    Pairs are uniform seeded draws (with replacement) from the two sets. The
    how-to-blend choice in the overlap is a convention of this artifact, not a
    requirement of the source construction. Returns one dataset per corner
    task; both share the flattened canvases.
    """
    images_a = np.asarray(images_a)
    images_b = np.asarray(images_b)
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    side = 28
    for name, imgs in (("first", images_a), ("second", images_b)):
        if imgs.ndim != 3 or imgs.shape[1:] != (side, side):
            raise IdxFormatError(
                f"{name} image set must be (n, {side}, {side}), got {imgs.shape}"
            )
    if canvas < side:
        raise ConfigError(f"canvas {canvas} smaller than digit side {side}")
    if len(images_a) != len(labels_a) or len(images_b) != len(labels_b):
        raise DimensionError("image and label counts differ")

    rng = np.random.default_rng(seed)
    if n_pairs is None:
        n_pairs = min(len(images_a), len(images_b))
    idx_a = rng.integers(0, len(images_a), size=n_pairs)
    idx_b = rng.integers(0, len(images_b), size=n_pairs)

    off = canvas - side
    out = np.zeros((n_pairs, canvas, canvas), dtype=np.float64)
    out[:, :side, :side] = images_a[idx_a]
    np.maximum(out[:, off:, off:], images_b[idx_b], out=out[:, off:, off:])

    flat = out.reshape(n_pairs, canvas * canvas)
    y_a = labels_a[idx_a].astype(np.int64)
    y_b = labels_b[idx_b].astype(np.int64)
    return TaskDataset(flat, y_a, split), TaskDataset(flat, y_b, split)


def standardize(ds: TaskDataset, stats=None) -> tuple[TaskDataset, tuple[np.ndarray, np.ndarray]]:
    """Per-feature (x - mean) / std; std floored at 1e-8.

    Without stats the moments come from ds itself (use the train split); pass
    the returned stats to transform the test split so nothing leaks.
    """
    if stats is None:
        mean = ds.x.mean(axis=0)
        std = np.maximum(ds.x.std(axis=0), 1e-8)
    else:
        mean, std = stats
    x = (ds.x - mean) / std
    return TaskDataset(x, ds.y, ds.split), (mean, std)


def standardize_task(td: TaskData) -> tuple[TaskData, tuple[np.ndarray, np.ndarray]]:
    """Standardize one task with train-split statistics reused on test."""
    train, stats = standardize(td.train)
    test, _ = standardize(td.test, stats)
    return TaskData(train, test), stats
