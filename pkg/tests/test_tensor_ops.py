"""Tensor container behavior and the functional op wrappers."""

import numpy as np
import pytest

from sprout import ops
from sprout.errors import NumericError, ShapeError
from sprout.rng import Rng
from sprout.tensor import Tensor, assert_finite


def f32(values, shape=None):
    arr = np.array(values, dtype=np.float32)
    return arr.reshape(shape) if shape is not None else arr


class TestTensor:
    def test_constructor_defaults_to_float32(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float32 and t.shape == (2, 2) and t.size == 4

    def test_float64_allowed(self):
        t = Tensor.zeros((3,), dtype=np.float64)
        assert t.dtype == np.float64

    def test_wrap_adopts_without_copy(self):
        arr = np.zeros((2, 2), dtype=np.float32)
        t = Tensor.wrap(arr)
        arr[0, 0] = 5.0
        assert t.data[0, 0] == 5.0

    def test_uniform_uses_rng(self):
        a = Tensor.uniform(Rng(5), (4, 3), -1, 1)
        b = Tensor.uniform(Rng(5), (4, 3), -1, 1)
        assert (a.data == b.data).all()
        assert a.shape == (4, 3)
        assert a.data.min() >= -1 and a.data.max() < 1

    def test_set_grad_checks_shape(self):
        t = Tensor.zeros((2, 2))
        with pytest.raises(ShapeError):
            t.set_grad(np.zeros((2, 3), dtype=np.float32))

    def test_add_grad_accumulates(self):
        t = Tensor.zeros((3,))
        t.add_grad(np.ones(3, dtype=np.float32))
        t.add_grad(np.ones(3, dtype=np.float32))
        assert (t.grad == 2).all()
        t.zero_grad()
        assert t.grad is None

    def test_copy_is_deep(self):
        t = Tensor.full((2,), 3.0)
        t.add_grad(np.ones(2, dtype=np.float32))
        c = t.copy()
        c.data[0] = 9.0
        c.grad[0] = 9.0
        assert t.data[0] == 3.0 and t.grad[0] == 1.0

    def test_assert_finite(self):
        assert_finite(np.ones(3), "ok")
        with pytest.raises(NumericError, match="bad tensor"):
            assert_finite(np.array([1.0, np.nan]), "bad tensor")
        with pytest.raises(NumericError):
            assert_finite(np.array([np.inf]), "x")


class TestMatmulOp:
    def test_identity(self):
        b = f32([[1, 2], [3, 4]])
        out = ops.matmul(Tensor(np.eye(2)), Tensor.wrap(b))
        assert (out.data == b).all()

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        assert (ops.matmul(a, b).data == [[19.0, 22.0], [43.0, 50.0]]).all()

    def test_zeros_annihilate(self):
        out = ops.matmul(Tensor.zeros((3, 4)), Tensor(np.ones((4, 2))))
        assert out.shape == (3, 2) and (out.data == 0).all()

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            ops.matmul(Tensor.zeros((3, 4)), Tensor.zeros((3, 2)))


class TestConvOps:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 3, 3, 1))
        k = Tensor(np.ones((1, 1, 1, 1)))
        y = ops.conv2d_forward(x, k, stride=1, padding=(0, 0, 0, 0))
        assert (y.data == x.data).all()

    def test_ones_hand_sum(self):
        x = Tensor(np.ones((1, 4, 4, 1)))
        k = Tensor(np.ones((3, 3, 1, 1)))
        y = ops.conv2d_forward(x, k, stride=1, padding=(0, 0, 0, 0))
        assert y.shape == (1, 2, 2, 1) and (y.data == 9.0).all()

    def test_stem_shape(self):
        x = Tensor.zeros((1, 224, 224, 3))
        k = Tensor.zeros((3, 3, 3, 32))
        y = ops.conv2d_forward(x, k, stride=2, padding=(0, 1, 0, 1))
        assert y.shape == (1, 112, 112, 32)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.conv2d_forward(Tensor.zeros((1, 4, 4, 3)), Tensor.zeros((3, 3, 2, 8)))

    def test_nonpositive_extent(self):
        with pytest.raises(ShapeError, match="extent"):
            ops.conv2d_forward(Tensor.zeros((1, 2, 2, 1)), Tensor.zeros((3, 3, 1, 1)))


class TestDepthwiseOps:
    def test_identity_kernel(self):
        x = Tensor(np.arange(18, dtype=np.float32).reshape(1, 3, 3, 2))
        k = Tensor(np.ones((1, 1, 2)))
        y = ops.depthwise_conv2d_forward(x, k, 1, (0, 0, 0, 0))
        assert (y.data == x.data).all()

    def test_zero_channel_isolation(self):
        x = np.ones((1, 5, 5, 2), dtype=np.float32)
        x[..., 1] = 0.0
        k = Tensor(np.full((3, 3, 2), 2.0))
        y = ops.depthwise_conv2d_forward(Tensor.wrap(x), k, 1, (1, 1, 1, 1))
        assert (y.data[..., 1] == 0).all()
        assert y.data[0, 2, 2, 0] == 18.0

    def test_ones_hand_sums(self):
        x = Tensor(np.ones((1, 3, 3, 2)))
        k = Tensor(np.ones((3, 3, 2)))
        y = ops.depthwise_conv2d_forward(x, k, 1, (1, 1, 1, 1))
        assert y.shape == (1, 3, 3, 2)
        assert (y.data[0, 1, 1, :] == 9.0).all()
        for r, c in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert (y.data[0, r, c, :] == 4.0).all()


class TestBatchNormOp:
    def params(self, c):
        return (Tensor(np.ones(c)), Tensor.zeros((c,)),
                Tensor.zeros((c,)), Tensor(np.ones(c)))

    def test_inference_near_identity(self):
        x = Tensor(np.linspace(-2, 2, 12).reshape(3, 4))
        gamma, beta, mean, var = self.params(4)
        y = ops.batchnorm_forward(x, gamma, beta, mean, var, mode="inference")
        np.testing.assert_allclose(y.data, x.data, atol=2e-3)

    def test_constant_batch_normalizes_to_beta(self):
        x = Tensor.full((4, 3), 7.0)
        gamma, beta, mean, var = self.params(3)
        beta.data[:] = 0.25
        y = ops.batchnorm_forward(x, gamma, beta, mean, var, mode="train")
        np.testing.assert_allclose(y.data, 0.25, atol=1e-6)

    def test_two_point_batch_hand_value(self):
        # mean 2, biased var 1: (x - 2) / sqrt(1 + 1e-3) = -/+ 0.9995003...
        x = Tensor([[1.0], [3.0]])
        gamma, beta, mean, var = self.params(1)
        y = ops.batchnorm_forward(x, gamma, beta, mean, var, mode="train")
        expect = 1.0 / np.sqrt(1.001)
        np.testing.assert_allclose(y.data.ravel(), [-expect, expect], rtol=1e-6)
        assert abs(expect - 0.99950) < 5e-6

    def test_biased_not_unbiased_variance(self):
        # unbiased variance of {1, 3} would be 2 and give +/- 0.70675
        x = Tensor([[1.0], [3.0]])
        gamma, beta, mean, var = self.params(1)
        y = ops.batchnorm_forward(x, gamma, beta, mean, var, mode="train")
        assert abs(abs(y.data[0, 0]) - 1.0 / np.sqrt(2.001)) > 0.2

    def test_moving_stats_update_rule(self):
        x = Tensor([[1.0], [3.0]])
        gamma, beta, mean, var = self.params(1)
        ops.batchnorm_forward(x, gamma, beta, mean, var, mode="train",
                              momentum=0.99)
        np.testing.assert_allclose(mean.data, [0.99 * 0.0 + 0.01 * 2.0], rtol=1e-6)
        np.testing.assert_allclose(var.data, [0.99 * 1.0 + 0.01 * 1.0], rtol=1e-6)

    def test_inference_leaves_moving_stats(self):
        x = Tensor([[1.0], [3.0]])
        gamma, beta, mean, var = self.params(1)
        ops.batchnorm_forward(x, gamma, beta, mean, var, mode="inference")
        assert mean.data[0] == 0.0 and var.data[0] == 1.0

    def test_param_length_validation(self):
        x = Tensor.zeros((2, 3))
        good = Tensor(np.ones(3))
        bad = Tensor(np.ones(4))
        with pytest.raises(ShapeError):
            ops.batchnorm_forward(x, bad, good, good, good, mode="train")

    def test_zero_batch_train_errors(self):
        x = Tensor.zeros((0, 3))
        p = Tensor(np.ones(3))
        with pytest.raises(ShapeError, match="zero batch"):
            ops.batchnorm_forward(x, p, p, p, p, mode="train")


class TestActivationOp:
    def test_relu6_clamps(self):
        y = ops.activation_forward(Tensor([[7.5, -1.0, 3.0]]), "relu6")
        assert y.data.tolist() == [[6.0, 0.0, 3.0]]

    def test_softmax_uniform(self):
        y = ops.activation_forward(Tensor.zeros((1, 7)), "softmax")
        np.testing.assert_allclose(y.data, 1.0 / 7.0, rtol=1e-6)

    def test_softmax_hand_values(self):
        y = ops.activation_forward(Tensor([[1.0, 2.0]]), "softmax")
        np.testing.assert_allclose(y.data, [[0.26894, 0.73106]], atol=1e-5)

    def test_softmax_large_logit_stability(self):
        y = ops.activation_forward(Tensor([[1e4, 0.0, -1e4]]), "softmax")
        assert np.isfinite(y.data).all()
        assert (y.data >= 0).all()
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_relu(self):
        y = ops.activation_forward(Tensor([[-1.0, 2.0]]), "relu")
        assert y.data.tolist() == [[0.0, 2.0]]


class TestPoolDropDense:
    def test_gap_constant(self):
        y = ops.global_avg_pool(Tensor.full((2, 3, 3, 4), 5.0))
        assert y.shape == (2, 4) and (y.data == 5.0).all()

    def test_gap_hand_mean(self):
        x = Tensor(f32([1, 2, 3, 4], (1, 2, 2, 1)))
        assert ops.global_avg_pool(x).data.item() == 2.5

    def test_gap_degenerate_spatial(self):
        x = Tensor(np.arange(3, dtype=np.float32).reshape(1, 1, 1, 3))
        assert (ops.global_avg_pool(x).data == [[0.0, 1.0, 2.0]]).all()

    def test_gap_rejects_non_nhwc(self):
        with pytest.raises(ShapeError):
            ops.global_avg_pool(Tensor.zeros((2, 3)))

    def test_dropout_inference_identity(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
        y = ops.dropout_forward(x, 0.25, mode="inference", rng=Rng(0))
        assert (y.data == x.data).all()

    def test_dropout_rate_zero_train_identity(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
        y = ops.dropout_forward(x, 0.0, mode="train", rng=Rng(0))
        assert (y.data == x.data).all()

    def test_dropout_survivor_fraction(self):
        n = 10**6
        x = Tensor(np.ones((1, n)))
        y = ops.dropout_forward(x, 0.25, mode="train", rng=Rng(9))
        survivors = np.count_nonzero(y.data) / n
        assert abs(survivors - 0.75) < 0.005
        # inverted scaling keeps the expectation at the input mean
        assert abs(y.data.mean() - 1.0) < 0.01
        np.testing.assert_allclose(y.data.max(), 1.0 / 0.75, rtol=1e-6)

    def test_dropout_rate_validation(self):
        with pytest.raises(ValueError):
            ops.dropout_forward(Tensor.zeros((2, 2)), 1.0, mode="train", rng=Rng(0))

    def test_dense_identity_weight(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        y = ops.dense_forward(x, Tensor(np.eye(3)), Tensor.zeros((3,)))
        assert (y.data == x.data).all()

    def test_dense_hand_affine(self):
        x = Tensor([[1.0, 1.0]])
        w = Tensor([[1.0], [2.0]])
        b = Tensor([0.5])
        assert ops.dense_forward(x, w, b).data.tolist() == [[3.5]]

    def test_dense_zero_input_gives_bias(self):
        y = ops.dense_forward(Tensor.zeros((3, 2)), Tensor(np.ones((2, 4))),
                              Tensor([1.0, 2.0, 3.0, 4.0]))
        assert (y.data == [1.0, 2.0, 3.0, 4.0]).all()

    def test_dense_bias_shape_error(self):
        with pytest.raises(ShapeError):
            ops.dense_forward(Tensor.zeros((2, 3)), Tensor.zeros((3, 4)),
                              Tensor.zeros((5,)))

    def test_rescale(self):
        y = ops.rescale(Tensor([[0.0, 128.0, 255.0]]))
        assert y.data[0, 0] == 0.0 and y.data[0, 2] == 1.0
        np.testing.assert_allclose(y.data[0, 1], 128.0 / 255.0, rtol=1e-6)
