"""Autodiff engine: gradient oracles, broadcasting rules, tape semantics."""

import numpy as np
import pytest

from stmae.errors import NumericError, ShapeError
from stmae.tensor import (Tape, Tensor, concatenate, gather_rows,
                          gather_tokens, gelu, grad_check, layer_norm,
                          log_softmax, matmul, mean, no_grad, scatter_rows,
                          scatter_tokens, softmax, transpose, tsum)


def _t(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


class TestGradOracles:
    """Central-difference checks; analytic gradients must match to <1e-6."""

    def check(self, f, x, tol=1e-6):
        assert grad_check(f, x) < tol

    def test_matmul(self):
        a = _t((4, 5), 1)
        b = Tensor(np.random.default_rng(2).standard_normal((5, 3)))
        self.check(lambda t: mean(matmul(t, b)), a)

    def test_matmul_batched_broadcast(self):
        a = _t((2, 4, 5), 3)
        b = _t((5, 3), 4)
        self.check(lambda t: mean(matmul(a, t) * matmul(a, t)), b)

    def test_softmax(self):
        self.check(lambda t: mean(softmax(t) * softmax(t)), _t((6, 9), 5))

    def test_log_softmax(self):
        self.check(lambda t: mean(log_softmax(t)), _t((6, 9), 6))

    def test_layer_norm(self):
        x = _t((5, 8), 7)
        g = _t((8,), 8)
        b = _t((8,), 9)
        self.check(lambda t: mean(layer_norm(t, g, b) * layer_norm(t, g, b)),
                   x)
        self.check(lambda t: mean(layer_norm(x, t, b) * layer_norm(x, t, b)),
                   g)

    def test_gelu(self):
        self.check(lambda t: mean(gelu(t)), _t((7, 3), 10))

    def test_gather_scatter_tokens(self):
        x = _t((2, 6, 4), 11)
        idx = np.array([[0, 2, 5], [1, 3, 4]])

        def f(t):
            rows = gather_tokens(t, idx)
            return mean(scatter_tokens(rows, idx, 6))
        self.check(f, x)

    def test_transpose_concat(self):
        x = _t((3, 4), 12)
        self.check(lambda t: mean(concatenate([transpose(t, (1, 0)),
                                               transpose(t, (1, 0))], 1)), x)


def test_grad_check_requires_float64():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda t: mean(t), x)


def test_leading_broadcast_allowed_trailing_mismatch_rejected():
    a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    b = Tensor(np.ones((3, 4)), requires_grad=True)
    out = a + b
    assert out.data.shape == (2, 3, 4)
    with Tape() as tape:
        a2 = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        b2 = Tensor(np.ones((3, 4)), requires_grad=True)
        loss = tsum(a2 + b2)
        tape.backward(loss)
    np.testing.assert_array_equal(b2.grad, np.full((3, 4), 2.0))
    c = Tensor(np.ones((2, 1, 4)))
    with pytest.raises(ShapeError):
        a + c  # interior size-1 stretching is not part of the contract


def test_sum_and_mean_axis_handling():
    x = _t((2, 3, 4), 13)
    assert tsum(x, axis=(0, 2)).data.shape == (3,)
    assert mean(x, axis=-1).data.shape == (2, 3)
    np.testing.assert_allclose(mean(x).data, x.data.mean())


def test_tape_clears_after_backward():
    with Tape() as tape:
        x = _t((3,), 14)
        loss = tsum(x * x)
        tape.backward(loss)
        assert len(tape._records) == 0
    assert x.grad is not None


def test_backward_needs_scalar_root():
    with Tape() as tape:
        x = _t((3,), 15)
        y = x * x
        with pytest.raises(ShapeError):
            tape.backward(y)


def test_no_grad_blocks_recording():
    with Tape() as tape:
        x = _t((3,), 16)
        with no_grad():
            y = x * x
        assert len(tape._records) == 0
        assert y.data.shape == (3,)


def test_gradient_accumulates_across_two_uses():
    with Tape() as tape:
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        loss = tsum(x * x) + tsum(x * x)
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, 4.0 * x.data)


def test_finiteness_guard_raises():
    x = Tensor(np.array([1.0, np.inf]))
    y = Tensor(np.array([1.0, 1.0]))
    with pytest.raises(NumericError):
        x + y


def test_gather_rows_rejects_out_of_range():
    x = _t((4, 3), 17)
    with pytest.raises((ShapeError, IndexError)):
        gather_rows(x, np.array([0, 4]))


def test_scatter_rows_rejects_duplicate_targets():
    x = _t((2, 3), 18)
    with pytest.raises(ShapeError):
        scatter_rows(x, np.array([1, 1]), 4)


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        matmul(_t((2, 3), 19), _t((4, 2), 20))


def test_values_match_numpy_reference():
    rng = np.random.default_rng(21)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b,
                               rtol=1e-12)
    x = rng.standard_normal((6, 8))
    s = softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(Tensor(x)).data), s,
                               rtol=1e-6)
