import hashlib

import numpy as np
import pytest

from mtlab.data import gen_synthetic_classification, gen_synthetic_regression
from mtlab.errors import ConfigError, TargetError
from mtlab.noise import (
    NoiseKind,
    NoiseSpec,
    apply_noise,
    inject_gaussian,
    inject_symmetric_flip,
    select_rows,
    selected_row_count,
)


class TestSymmetricFlip:
    def test_level_zero_unchanged(self):
        labels = np.arange(10) % 3
        assert np.array_equal(inject_symmetric_flip(labels, 3, 0.0, seed=1), labels)

    def test_full_level_retention_rate(self):
        # uniform redraw keeps the original label with probability 1/K
        n, k = 10_000, 5
        rng = np.random.default_rng(0)
        labels = rng.integers(0, k, size=n)
        noisy = inject_symmetric_flip(labels, k, 1.0, seed=42)
        retained = (noisy == labels).mean()
        p = 1.0 / k
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(retained - p) < 3 * sigma

    def test_determinism(self):
        labels = np.random.default_rng(3).integers(0, 4, size=500)
        a = inject_symmetric_flip(labels, 4, 0.35, seed=7)
        b = inject_symmetric_flip(labels, 4, 0.35, seed=7)
        assert np.array_equal(a, b)

    def test_selection_set_size_and_rows(self):
        n, level, seed = 1000, 0.37, 11
        labels = np.zeros(n, dtype=np.int64)
        noisy = inject_symmetric_flip(labels, 6, level, seed=seed)
        rows = select_rows(n, level, seed)
        assert rows.shape[0] == selected_row_count(n, level) == 370
        changed = np.flatnonzero(noisy != labels)
        assert set(changed) <= set(rows.tolist())
        untouched = np.setdiff1d(np.arange(n), rows)
        assert np.array_equal(noisy[untouched], labels[untouched])

    def test_invalid_label_raises(self):
        with pytest.raises(TargetError):
            inject_symmetric_flip(np.array([0, 7]), 3, 0.5, seed=0)

    def test_bad_level_raises(self):
        with pytest.raises(ConfigError):
            inject_symmetric_flip(np.array([0, 1]), 2, 1.5, seed=0)


class TestGaussianNoise:
    def test_level_zero_unchanged(self):
        targets = np.random.default_rng(1).standard_normal((50, 2))
        assert np.array_equal(inject_gaussian(targets, 0.0, seed=2), targets)

    def test_full_level_doubles_variance(self):
        rng = np.random.default_rng(5)
        targets = rng.standard_normal((10_000, 1)) * 3.0
        noisy = inject_gaussian(targets, 1.0, seed=9)
        v = targets.var(axis=0)
        assert np.all(np.abs(noisy.var(axis=0) - 2 * v) < 0.1 * 2 * v)

    def test_determinism(self):
        targets = np.random.default_rng(2).standard_normal((200, 3))
        a = inject_gaussian(targets, 0.5, seed=13)
        b = inject_gaussian(targets, 0.5, seed=13)
        assert np.array_equal(a, b)

    def test_only_selected_rows_change(self):
        targets = np.random.default_rng(8).standard_normal((400, 2))
        noisy = inject_gaussian(targets, 0.25, seed=21)
        rows = set(select_rows(400, 0.25, 21).tolist())
        changed = set(np.flatnonzero((noisy != targets).any(axis=1)).tolist())
        assert changed <= rows
        assert len(rows) == 100

    def test_zero_variance_column_raises(self):
        targets = np.ones((20, 1))
        with pytest.raises(ConfigError):
            inject_gaussian(targets, 0.5, seed=0)


class TestApplyNoise:
    def _hash(self, ds):
        digest = hashlib.sha256()
        digest.update(ds.x.tobytes())
        digest.update(np.ascontiguousarray(ds.y).tobytes())
        return digest.hexdigest()

    def test_test_split_untouched(self):
        datasets = gen_synthetic_classification(2, 3, 8, 200, 4.0, seed=3)
        before = [self._hash(td.test) for td in datasets]
        spec = NoiseSpec(1, NoiseKind.SYMMETRIC_FLIP, 0.8, seed=4)
        noisy = apply_noise(datasets, [spec], num_classes=3)
        after = [self._hash(td.test) for td in noisy]
        assert before == after
        assert not np.array_equal(noisy[1].train.y, datasets[1].train.y)
        assert np.array_equal(noisy[0].train.y, datasets[0].train.y)

    def test_regression_noise(self):
        datasets = gen_synthetic_regression(2, 4, 300, 0.1, seed=6)
        spec = NoiseSpec(0, NoiseKind.ADDITIVE_GAUSSIAN, 0.5, seed=1)
        noisy = apply_noise(datasets, [spec])
        assert not np.array_equal(noisy[0].train.y, datasets[0].train.y)
        assert np.array_equal(noisy[0].test.y, datasets[0].test.y)

    def test_bad_task_id(self):
        datasets = gen_synthetic_regression(2, 4, 50, 0.1, seed=6)
        with pytest.raises(ConfigError):
            apply_noise(datasets, [NoiseSpec(5, NoiseKind.ADDITIVE_GAUSSIAN, 0.5, 1)])
