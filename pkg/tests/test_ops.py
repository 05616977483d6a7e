"""Network ops versus independent reference implementations."""

import numpy as np
import pytest

from helpers import check_grads, ref_bce, ref_conv2d, ref_lstm_cell, ref_pool2d
from stiln.errors import ContractError, ShapeError
from stiln.ops import (
    bce_loss,
    conv1d,
    conv2d,
    dense,
    flatten,
    lstm_cell,
    norm_batch,
    norm_instance,
    pool2d,
)
from stiln.tensor import Tape, Tensor, backward


def t64(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)


class TestConv2d:
    @pytest.mark.parametrize(
        "bsz,h,w,cin,cout,k,stride,padding",
        [
            (2, 6, 6, 3, 4, 3, 1, 1),
            (1, 7, 5, 2, 3, 3, 2, 0),
            (3, 8, 8, 1, 2, 5, 1, 2),
            (2, 4, 4, 3, 5, 1, 1, 0),
            (1, 9, 9, 2, 2, 3, 3, 1),
        ],
    )
    def test_matches_window_scan(self, bsz, h, w, cin, cout, k, stride, padding):
        rng = np.random.default_rng(hash((bsz, h, k, stride)) % 2**32)
        x = rng.standard_normal((bsz, h, w, cin))
        wk = rng.standard_normal((k, k, cin, cout))
        b = rng.standard_normal(cout)
        got = conv2d(
            Tensor(x, dtype=np.float64),
            Tensor(wk, dtype=np.float64),
            Tensor(b, dtype=np.float64),
            stride=stride,
            padding=padding,
        )
        np.testing.assert_allclose(got.data, ref_conv2d(x, wk, b, stride, padding), rtol=1e-12)

    def test_single_frame_input_keeps_rank(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 5, 2))
        wk = rng.standard_normal((3, 3, 2, 4))
        out = conv2d(Tensor(x, dtype=np.float64), Tensor(wk, dtype=np.float64), padding=1)
        assert out.shape == (5, 5, 4)
        ref = ref_conv2d(x[None], wk, None, 1, 1)[0]
        np.testing.assert_allclose(out.data, ref, rtol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(11)
        x = t64(rng, 2, 5, 5, 2)
        w = t64(rng, 3, 3, 2, 3)
        b = t64(rng, 3)
        check_grads(lambda: conv2d(x, w, b, stride=2, padding=1).sum(), [x, w, b])

    def test_gradients_no_bias_3d(self):
        rng = np.random.default_rng(12)
        x = t64(rng, 4, 4, 2)
        w = t64(rng, 3, 3, 2, 2)
        check_grads(lambda: conv2d(x, w, padding=1).sum(), [x, w])

    def test_shape_errors(self):
        x = Tensor(np.zeros((2, 4, 4, 3)))
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.zeros((3, 3, 2, 4))))  # channel mismatch
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.zeros((5, 5, 3, 4))))  # kernel exceeds input
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.zeros((3, 3, 3, 4))), Tensor(np.zeros(5)))  # bad bias
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.zeros((3, 2, 3, 4))))  # non-square kernel


class TestConv1d:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((3, 20))
        w = rng.standard_normal(4)
        b = rng.standard_normal(1)
        got = conv1d(
            Tensor(x, dtype=np.float64),
            Tensor(w, dtype=np.float64),
            Tensor(b, dtype=np.float64),
            stride=3,
        )
        lo = (20 - 4) // 3 + 1
        ref = np.zeros((3, lo))
        for bi in range(3):
            for t in range(lo):
                ref[bi, t] = np.dot(x[bi, t * 3 : t * 3 + 4], w) + b[0]
        np.testing.assert_allclose(got.data, ref, rtol=1e-12)

    def test_width_one_kernel_large_stride(self):
        x = Tensor(np.arange(240, dtype=np.float64).reshape(1, 240), dtype=np.float64)
        w = Tensor(np.array([2.0]), dtype=np.float64)
        out = conv1d(x, w, stride=48)
        assert out.shape == (1, 5)
        np.testing.assert_allclose(out.data, [[0.0, 96.0, 192.0, 288.0, 384.0]])

    def test_gradients(self):
        rng = np.random.default_rng(22)
        x = t64(rng, 2, 13)
        w = t64(rng, 3)
        b = t64(rng, 1)
        check_grads(lambda: conv1d(x, w, b, stride=2).sum(), [x, w, b])

    def test_kernel_longer_than_input_raises(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros(5)))


class TestPool2d:
    @pytest.mark.parametrize("mode", ["max", "avg"])
    def test_matches_window_scan(self, mode):
        rng = np.random.default_rng(31)
        x = rng.standard_normal((2, 6, 4, 3))
        got = pool2d(Tensor(x, dtype=np.float64), 2, mode)
        np.testing.assert_allclose(got.data, ref_pool2d(x, 2, mode), rtol=1e-12)

    @pytest.mark.parametrize("mode", ["max", "avg"])
    def test_gradients(self, mode):
        rng = np.random.default_rng(32)
        x = t64(rng, 2, 4, 4, 2)
        check_grads(lambda: pool2d(x, 2, mode).sum(), [x])

    def test_max_tie_routes_to_first_cell(self):
        x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True, dtype=np.float64)
        with Tape():
            loss = pool2d(x, 2, "max").sum()
        backward(loss)
        expect = np.zeros((1, 2, 2, 1))
        expect[0, 0, 0, 0] = 1.0  # row-major first cell of the window
        np.testing.assert_array_equal(x.grad, expect)

    def test_indivisible_extent_raises(self):
        with pytest.raises(ShapeError):
            pool2d(Tensor(np.zeros((1, 5, 4, 1))), 2)

    def test_bad_mode_raises(self):
        with pytest.raises(ShapeError):
            pool2d(Tensor(np.zeros((1, 4, 4, 1))), 2, "median")


class TestBatchNorm:
    def _buffers(self, c):
        return np.zeros(c, dtype=np.float64), np.ones(c, dtype=np.float64)

    def test_training_normalizes_per_channel(self):
        rng = np.random.default_rng(41)
        x = rng.standard_normal((4, 3, 3, 2)) * 3.0 + 1.5
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        rm, rv = self._buffers(2)
        out = norm_batch(Tensor(x, dtype=np.float64), gamma, beta, rm, rv, training=True)
        got_mu = out.data.mean(axis=(0, 1, 2))
        got_var = out.data.var(axis=(0, 1, 2))
        np.testing.assert_allclose(got_mu, 0.0, atol=1e-12)
        np.testing.assert_allclose(got_var, 1.0, atol=1e-4)  # eps shrinks it slightly

    def test_running_stats_blend(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((4, 2, 2, 3))
        gamma = Tensor(np.ones(3), dtype=np.float64)
        beta = Tensor(np.zeros(3), dtype=np.float64)
        rm, rv = self._buffers(3)
        rm[:] = 1.0
        rv[:] = 2.0
        norm_batch(Tensor(x, dtype=np.float64), gamma, beta, rm, rv, training=True)
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        np.testing.assert_allclose(rm, 0.9 * 1.0 + 0.1 * mu, rtol=1e-12)
        np.testing.assert_allclose(rv, 0.9 * 2.0 + 0.1 * var, rtol=1e-12)

    def test_eval_uses_running_stats(self):
        rng = np.random.default_rng(43)
        x = rng.standard_normal((2, 2, 2, 2))
        gamma = Tensor(np.full(2, 1.5), dtype=np.float64)
        beta = Tensor(np.full(2, -0.5), dtype=np.float64)
        rm = np.array([0.5, -0.25])
        rv = np.array([4.0, 0.25])
        out = norm_batch(Tensor(x, dtype=np.float64), gamma, beta, rm, rv, training=False)
        ref = 1.5 * (x - rm) / np.sqrt(rv + 1e-5) - 0.5
        np.testing.assert_allclose(out.data, ref, rtol=1e-10)

    def test_batch_of_one_raises_in_training(self):
        gamma = Tensor(np.ones(2))
        beta = Tensor(np.zeros(2))
        rm, rv = self._buffers(2)
        with pytest.raises(ContractError):
            norm_batch(Tensor(np.zeros((1, 3, 3, 2))), gamma, beta, rm, rv, training=True)

    def test_gradients_training_and_eval(self):
        rng = np.random.default_rng(44)
        x = t64(rng, 3, 2, 2, 2)
        gamma = Tensor(rng.standard_normal(2) + 1.0, requires_grad=True, dtype=np.float64)
        beta = t64(rng, 2)
        wgt = rng.standard_normal((3, 2, 2, 2))
        for training in (True, False):
            rm, rv = self._buffers(2)

            def build():
                y = norm_batch(x, gamma, beta, rm, rv, training=training)
                return (y * Tensor(wgt, dtype=np.float64)).sum()

            check_grads(build, [x, gamma, beta], rtol=5e-4)


class TestInstanceNorm:
    def test_per_sample_affine_invariance(self):
        rng = np.random.default_rng(51)
        x = rng.standard_normal((2, 4, 4, 3))
        scale = rng.uniform(0.5, 2.0, size=(2, 1, 1, 3))
        shift = rng.standard_normal((2, 1, 1, 3))
        gamma = Tensor(rng.standard_normal(3), dtype=np.float64)
        beta = Tensor(rng.standard_normal(3), dtype=np.float64)
        a = norm_instance(Tensor(x, dtype=np.float64), gamma, beta)
        b = norm_instance(Tensor(x * scale + shift, dtype=np.float64), gamma, beta)
        # eps in the denominator perturbs invariance at O(eps/var); a real
        # break would show up at O(1)
        np.testing.assert_allclose(a.data, b.data, atol=1e-3)

    def test_single_frame_input(self):
        rng = np.random.default_rng(52)
        x = rng.standard_normal((4, 4, 2))
        gamma = Tensor(np.ones(2), dtype=np.float64)
        beta = Tensor(np.zeros(2), dtype=np.float64)
        out = norm_instance(Tensor(x, dtype=np.float64), gamma, beta)
        assert out.shape == (4, 4, 2)
        np.testing.assert_allclose(out.data.mean(axis=(0, 1)), 0.0, atol=1e-12)

    def test_degenerate_spatial_extent_raises(self):
        with pytest.raises(ContractError):
            norm_instance(Tensor(np.zeros((2, 1, 1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_gradients(self):
        rng = np.random.default_rng(53)
        x = t64(rng, 2, 3, 3, 2)
        gamma = Tensor(rng.standard_normal(2) + 1.0, requires_grad=True, dtype=np.float64)
        beta = t64(rng, 2)
        wgt = rng.standard_normal((2, 3, 3, 2))

        def build():
            y = norm_instance(x, gamma, beta)
            return (y * Tensor(wgt, dtype=np.float64)).sum()

        check_grads(build, [x, gamma, beta], rtol=5e-4)


class TestLstmCell:
    def _weights(self, rng, din, d):
        wx = t64(rng, din, 4 * d)
        wh = t64(rng, d, 4 * d)
        b = t64(rng, 4 * d)
        return wx, wh, b

    def test_matches_reference(self):
        rng = np.random.default_rng(61)
        wx, wh, b = self._weights(rng, 3, 2)
        x = rng.standard_normal((4, 3))
        h0 = rng.standard_normal((4, 2))
        c0 = rng.standard_normal((4, 2))
        h, c = lstm_cell(
            Tensor(x, dtype=np.float64),
            Tensor(h0, dtype=np.float64),
            Tensor(c0, dtype=np.float64),
            wx,
            wh,
            b,
        )
        rh, rc = ref_lstm_cell(x, h0, c0, wx.data, wh.data, b.data)
        np.testing.assert_allclose(h.data, rh, rtol=1e-10)
        np.testing.assert_allclose(c.data, rc, rtol=1e-10)

    def test_gradients_through_two_chained_steps(self):
        rng = np.random.default_rng(62)
        wx, wh, b = self._weights(rng, 3, 2)
        x1 = t64(rng, 2, 3)
        x2 = t64(rng, 2, 3)

        def build():
            h = Tensor(np.zeros((2, 2)), dtype=np.float64)
            c = Tensor(np.zeros((2, 2)), dtype=np.float64)
            h, c = lstm_cell(x1, h, c, wx, wh, b)
            h, c = lstm_cell(x2, h, c, wx, wh, b)
            return h.sum()

        check_grads(build, [x1, x2, wx, wh, b], rtol=5e-4)

    def test_shape_errors(self):
        rng = np.random.default_rng(63)
        wx, wh, b = self._weights(rng, 3, 2)
        good = Tensor(np.zeros((2, 3)))
        h = Tensor(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            lstm_cell(Tensor(np.zeros((2, 4))), h, h, wx, wh, b)  # wrong d_in
        with pytest.raises(ShapeError):
            lstm_cell(good, Tensor(np.zeros((2, 3))), h, wx, wh, b)  # wrong state width
        with pytest.raises(ShapeError):
            lstm_cell(good, h, h, Tensor(np.zeros((3, 7))), wh, b)  # 4d not divisible


class TestBceLoss:
    def test_matches_reference(self):
        rng = np.random.default_rng(71)
        p = rng.uniform(0.05, 0.95, size=(8, 2))
        t = (rng.uniform(size=(8, 2)) > 0.5).astype(float)
        loss = bce_loss(Tensor(p, dtype=np.float64), Tensor(t, dtype=np.float64))
        assert loss.shape == ()
        np.testing.assert_allclose(loss.item(), ref_bce(p, t), rtol=1e-12)

    def test_perfect_prediction_is_tiny(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = bce_loss(Tensor(t, dtype=np.float64), Tensor(t, dtype=np.float64))
        assert 0.0 <= loss.item() < 1e-6

    def test_gradients_interior(self):
        rng = np.random.default_rng(72)
        p = Tensor(rng.uniform(0.1, 0.9, size=(4, 2)), requires_grad=True, dtype=np.float64)
        t = Tensor((rng.uniform(size=(4, 2)) > 0.5).astype(float), dtype=np.float64)
        check_grads(lambda: bce_loss(p, t), [p])

    def test_clamped_predictions_get_zero_grad(self):
        p = Tensor(np.array([[0.0, 1.0], [0.5, 2.0]]), requires_grad=True, dtype=np.float64)
        t = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]), dtype=np.float64)
        with Tape():
            loss = bce_loss(p, t)
        backward(loss)
        assert p.grad[0, 0] == 0.0 and p.grad[0, 1] == 0.0 and p.grad[1, 1] == 0.0
        assert p.grad[1, 0] != 0.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


class TestDenseFlatten:
    def test_dense_gradients(self):
        rng = np.random.default_rng(81)
        x = t64(rng, 3, 4)
        w = t64(rng, 4, 2)
        b = t64(rng, 2)
        check_grads(lambda: dense(x, w, b).sum(), [x, w, b])

    def test_flatten_shape(self):
        x = Tensor(np.zeros((2, 3, 4, 5)))
        assert flatten(x).shape == (2, 60)
