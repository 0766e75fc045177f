import math

import numpy as np
import pytest

from mtlab.errors import DimensionError, InputError, TargetError
from mtlab.model import (
    LossKind,
    ModelSpec,
    forward,
    init_params,
    loss_and_grad,
    pareto_dominates,
)

CE = LossKind.SOFTMAX_CROSS_ENTROPY
SE = LossKind.SQUARED_ERROR


def small_spec():
    return ModelSpec(3, (4,), ((3, CE), (2, SE)))


def random_batch(spec, task, n, rng):
    x = rng.standard_normal((n, spec.input_dim))
    out_dim, kind = spec.task_heads[task]
    if kind is CE:
        y = rng.integers(0, out_dim, size=n)
    else:
        y = rng.standard_normal((n, out_dim))
    return x, y


def finite_difference(p, spec, batch, task, flat, h=1e-5):
    """Central differences of the batch-mean loss along every coordinate."""
    grad = np.empty_like(flat)
    for j in range(flat.shape[0]):
        orig = flat[j]
        flat[j] = orig + h
        up = loss_and_grad(p, spec, batch, task).loss_value
        flat[j] = orig - h
        down = loss_and_grad(p, spec, batch, task).loss_value
        flat[j] = orig
        grad[j] = (up - down) / (2 * h)
    return grad


class TestForward:
    def test_zero_parameters_give_zero_predictions(self):
        spec = small_spec()
        p = init_params(spec, seed=0)
        p.shared[:] = 0.0
        for head in p.per_task:
            head[:] = 0.0
        x = np.random.default_rng(1).standard_normal((5, 3))
        assert np.array_equal(forward(p, spec, x, 0), np.zeros((5, 3)))

    def test_identity_trunk_rectifier(self):
        # one trunk layer = identity, zero bias; head = identity
        spec = ModelSpec(2, (2,), ((2, SE), (2, SE)))
        p = init_params(spec, seed=0)
        p.view("trunk.0.w")[:] = np.eye(2)
        p.view("trunk.0.b")[:] = 0.0
        for i in range(2):
            p.view(f"head.{i}.w")[:] = np.eye(2)
            p.view(f"head.{i}.b")[:] = 0.0
        out = forward(p, spec, np.array([[1.0, -2.0]]), 0)
        assert np.array_equal(out, [[1.0, 0.0]])

    def test_batch_shape(self):
        spec = small_spec()
        p = init_params(spec, seed=3)
        x = np.random.default_rng(0).standard_normal((7, 3))
        assert forward(p, spec, x, 1).shape == (7, 2)

    def test_dim_mismatch(self):
        spec = small_spec()
        p = init_params(spec, seed=3)
        with pytest.raises(DimensionError):
            forward(p, spec, np.zeros((4, 5)), 0)


class TestLossAndGrad:
    def test_squared_error_at_minimum(self):
        spec = ModelSpec(2, (2,), ((1, SE), (1, SE)))
        p = init_params(spec, seed=4)
        x = np.random.default_rng(2).standard_normal((6, 2))
        y = forward(p, spec, x, 0)  # targets equal to current predictions
        bundle = loss_and_grad(p, spec, (x, y), 0)
        assert bundle.loss_value == 0.0
        assert np.allclose(bundle.shared_grad, 0.0)
        assert np.allclose(bundle.head_grad, 0.0)

    def test_uniform_softmax_loss_is_log2(self):
        spec = ModelSpec(2, (2,), ((2, CE), (2, CE)))
        p = init_params(spec, seed=5)
        p.shared[:] = 0.0
        for head in p.per_task:
            head[:] = 0.0  # logits [0, 0] for every row
        x = np.ones((4, 2))
        y = np.array([0, 1, 0, 1])
        bundle = loss_and_grad(p, spec, (x, y), 0)
        assert bundle.loss_value == pytest.approx(math.log(2.0), abs=1e-12)

    @pytest.mark.parametrize("task", [0, 1])
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_gradients_match_finite_differences(self, task, seed):
        rng = np.random.default_rng(seed)
        spec = small_spec()
        p = init_params(spec, seed=seed + 100)
        batch = random_batch(spec, task, 5, rng)
        bundle = loss_and_grad(p, spec, batch, task)
        fd_shared = finite_difference(p, spec, batch, task, p.shared)
        fd_head = finite_difference(p, spec, batch, task, p.per_task[task])
        assert np.max(np.abs(bundle.shared_grad - fd_shared)) < 1e-5
        assert np.max(np.abs(bundle.head_grad - fd_head)) < 1e-5

    def test_task_isolation(self):
        spec = small_spec()
        rng = np.random.default_rng(11)
        p = init_params(spec, seed=11)
        batch = random_batch(spec, 0, 4, rng)
        before_other = p.per_task[1].copy()
        bundle_a = loss_and_grad(p, spec, batch, 0)
        assert np.array_equal(p.per_task[1], before_other)
        p.per_task[1][:] = rng.standard_normal(p.per_task[1].shape[0])
        bundle_b = loss_and_grad(p, spec, batch, 0)
        assert bundle_a.loss_value == bundle_b.loss_value
        assert np.array_equal(bundle_a.shared_grad, bundle_b.shared_grad)

    def test_cross_entropy_shift_invariance(self):
        spec = ModelSpec(2, (3,), ((4, CE), (4, CE)))
        rng = np.random.default_rng(8)
        p = init_params(spec, seed=8)
        x = rng.standard_normal((6, 2))
        y = rng.integers(0, 4, size=6)
        base = loss_and_grad(p, spec, (x, y), 0).loss_value
        p.view("head.0.b")[:] += 37.5  # constant added to every logit
        shifted = loss_and_grad(p, spec, (x, y), 0).loss_value
        assert abs(base - shifted) < 1e-10

    def test_bad_label_raises(self):
        spec = small_spec()
        p = init_params(spec, seed=0)
        x = np.zeros((2, 3))
        with pytest.raises(TargetError):
            loss_and_grad(p, spec, (x, np.array([0, 3])), 0)

    def test_empty_batch_raises(self):
        spec = small_spec()
        p = init_params(spec, seed=0)
        with pytest.raises(InputError):
            loss_and_grad(p, spec, (np.zeros((0, 3)), np.zeros(0, dtype=int)), 0)


class TestParetoDominates:
    def test_equal_profiles(self):
        assert pareto_dominates([1, 1], [1, 1]) is False

    def test_one_strict_improvement(self):
        assert pareto_dominates([1, 2], [2, 2]) is True

    def test_incomparable(self):
        assert pareto_dominates([1, 3], [2, 2]) is False

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            pareto_dominates([1, 2], [1, 2, 3])
