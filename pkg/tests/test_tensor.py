"""Autodiff engine: op semantics, gradient correctness, graph behavior."""

import numpy as np
import pytest

from seqtag.errors import ContractError, ShapeError
from seqtag.tensor import (Tensor, add, backward, concat, dropout,
                           embedding_lookup, gather, grad_check, layer_norm,
                           logsumexp_lastdim, matmul, max_pool_over_axis,
                           mean_all, mul, narrow, relu, reshape, sigmoid,
                           softmax_lastdim, split, sub, sum_all, tanh,
                           transpose)


class TestForwardSemantics:
    def test_softmax_uniform_logits(self):
        out = softmax_lastdim(Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_relu_definition(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((3, 5))
        out = matmul(Tensor(np.eye(3)), Tensor(m))
        np.testing.assert_array_equal(out.data, m)

    @pytest.mark.parametrize("seed", range(5))
    def test_softmax_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-50, 50, size=(6, 7)))
        out = softmax_lastdim(x).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("scale_", [1.0, 1e2, 1e4])
    def test_logsumexp_matches_reference_and_never_overflows(self, scale_):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=(4, 6)) * scale_
        got = logsumexp_lastdim(Tensor(x)).data
        ref = np.log(np.exp(x - x.max(-1, keepdims=True)).sum(-1)) + x.max(-1)
        assert np.all(np.isfinite(got))
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_dropout_is_identity_in_eval_mode(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        out = dropout(x, 0.5, None, training=False)
        assert out is x

    def test_dropout_preserves_expectation(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((200, 50)))
        out = dropout(x, 0.3, rng, training=True)
        assert abs(out.data.mean() - 1.0) < 0.02
        assert set(np.round(np.unique(out.data), 10)) == {0.0, round(1 / 0.7, 10)}

    def test_split_concat_roundtrip(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((4, 6)))
        parts = split(x, 3, axis=1)
        back = concat(parts, axis=1)
        np.testing.assert_array_equal(back.data, x.data)


class TestShapeErrors:
    def test_matmul_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(3, 4\).*\(5, 2\)"):
            matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))

    def test_add_mismatch(self):
        with pytest.raises(ShapeError, match="add"):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_empty_axis_pooling(self):
        with pytest.raises(ShapeError, match="empty axis"):
            max_pool_over_axis(Tensor(np.zeros((0, 4))), 0)

    def test_layer_norm_param_mismatch(self):
        with pytest.raises(ShapeError, match="layer_norm"):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.zeros(3)),
                       Tensor(np.zeros(4)))


class TestBackward:
    def test_square_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        sum_all(mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-14)

    def test_softmax_sum_has_zero_gradient(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        sum_all(softmax_lastdim(x)).backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            backward(mul(x, x))

    def test_unused_leaf_gradient_is_all_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        unused = Tensor([5.0, 6.0], requires_grad=True)
        sum_all(mul(x, x)).backward()
        np.testing.assert_array_equal(unused.grad, [0.0, 0.0])

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        sum_all(mul(x, x)).backward()
        sum_all(mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [4.0, 8.0], atol=1e-14)

    def test_leaf_used_twice_matches_single_use_form(self):
        # sum(x*x + x*x) against sum(2 * x*x)
        x1 = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        sum_all(add(mul(x1, x1), mul(x1, x1))).backward()
        x2 = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        from seqtag.tensor import scale
        sum_all(scale(mul(x2, x2), 2.0)).backward()
        np.testing.assert_allclose(x1.grad, x2.grad, atol=1e-14)

    def test_layer_norm_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        w = Tensor(rng.standard_normal(6))
        g = Tensor(rng.standard_normal(6), requires_grad=True)
        b = Tensor(rng.standard_normal(6), requires_grad=True)

        def f(x):
            return mean_all(mul(layer_norm(x, g, b), w))

        err = grad_check(f, Tensor(rng.standard_normal((3, 6)), requires_grad=True))
        assert err < 1e-5


def _random_tensor(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestGradCheckPerOp:
    """Every differentiable op kind, random small inputs, 10 seeds."""

    @pytest.mark.parametrize("seed", range(10))
    def test_all_op_kinds(self, seed):
        rng = np.random.default_rng(seed)
        # multipliers bounded away from zero so analytic gradients stay O(1)
        # and the relative-error denominator is meaningful
        b = Tensor(rng.uniform(0.5, 1.5, size=(5, 4)) * rng.choice([-1, 1], (5, 4)))
        vec = Tensor(rng.uniform(0.5, 1.5, size=4))
        gain = Tensor(rng.standard_normal(4), requires_grad=True)
        bias = Tensor(rng.standard_normal(4), requires_grad=True)
        idx = rng.integers(0, 5, size=6)
        flat = rng.integers(0, 20, size=8)

        cases = {
            "matmul": ((5, 4), lambda x: sum_all(matmul(transpose(x), b))),
            "add_bias": ((5, 4), lambda x: sum_all(mul(add(x, vec), b))),
            "sub": ((5, 4), lambda x: sum_all(mul(sub(x, b), b))),
            "mul": ((5, 4), lambda x: sum_all(mul(mul(x, b), b))),
            "concat_split": ((4, 4), lambda x: sum_all(
                mul(concat(split(x, 2, axis=1), axis=0), Tensor(np.ones((8, 2)))))),
            "narrow": ((6, 4), lambda x: sum_all(mul(narrow(x, 0, 1, 3),
                                                     Tensor(np.ones((3, 4)))))),
            "reshape": ((4, 4), lambda x: sum_all(mul(reshape(x, (2, 8)),
                                                      Tensor(np.ones((2, 8)))))),
            "relu": ((5, 4), lambda x: sum_all(mul(relu(x), b))),
            "sigmoid": ((5, 4), lambda x: sum_all(mul(sigmoid(x), b))),
            "tanh": ((5, 4), lambda x: sum_all(mul(tanh(x), b))),
            "softmax": ((5, 4), lambda x: sum_all(mul(softmax_lastdim(x), b))),
            "logsumexp": ((5, 4), lambda x: sum_all(mul(logsumexp_lastdim(x),
                                                        Tensor(np.ones(5))))),
            "max_pool": ((5, 4), lambda x: sum_all(mul(max_pool_over_axis(x, 0), vec))),
            "mean": ((5, 4), lambda x: mean_all(mul(x, b))),
            "embedding": ((5, 4), lambda x: sum_all(
                mul(embedding_lookup(x, idx), Tensor(np.ones((6, 4)))))),
            "gather": ((5, 4), lambda x: sum_all(mul(gather(x, flat, (2, 4)),
                                                     Tensor(np.ones((2, 4)))))),
            "layer_norm": ((5, 4), lambda x: sum_all(mul(layer_norm(x, gain, bias), b))),
        }
        for name, (shape, f) in cases.items():
            x = _random_tensor(rng, shape)
            err = grad_check(f, x)
            assert err < 1e-5, f"{name}: max relative gradient error {err}"


class TestGradCheckContract:
    def test_epsilon_range_enforced(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError, match="epsilon"):
            grad_check(lambda t: sum_all(t), x, epsilon=1e-2)

    def test_non_scalar_f_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            grad_check(lambda t: mul(t, t), x)

    def test_simple_quadratic_is_tight(self):
        err = grad_check(lambda t: sum_all(mul(t, t)),
                         Tensor([3.0], requires_grad=True))
        assert err < 1e-7
