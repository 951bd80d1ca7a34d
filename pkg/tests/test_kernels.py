import numpy as np
import pytest

from claret.errors import (
    ChannelMismatch,
    LengthMismatch,
    RankExceeded,
    ShapeMismatch,
    SpatialTooSmall,
)
from claret.kernels import (
    conv2d_same,
    conv2d_same_backward,
    matmul,
    maxpool2,
    maxpool2_backward,
    relu,
    softmax_rows,
    tensor_create,
)


def conv_reference(x, k, b, stride=1):
    """Naive 6-nested-loop convolution used as the independent oracle."""
    n_, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    oh, ow = -(-h // stride), -(-w // stride)
    pt = max((oh - 1) * stride + kh - h, 0) // 2
    pl = max((ow - 1) * stride + kw - w, 0) // 2
    out = np.zeros((n_, oh, ow, cout), dtype=x.dtype)
    for n in range(n_):
        for y in range(oh):
            for xx in range(ow):
                for co in range(cout):
                    acc = b[co]
                    for dy in range(kh):
                        for dx in range(kw):
                            iy, ix = y * stride + dy - pt, xx * stride + dx - pl
                            if 0 <= iy < h and 0 <= ix < w:
                                for ci in range(cin):
                                    acc += x[n, iy, ix, ci] * k[dy, dx, ci, co]
                    out[n, y, xx, co] = acc
    return out


class TestTensorCreate:
    def test_zero_fill(self):
        t = tensor_create((2, 2), 0)
        assert t.shape == (2, 2) and (t == 0).all()

    def test_list_fill(self):
        t = tensor_create((3,), [1, 2, 3])
        assert t.tolist() == [1.0, 2.0, 3.0]

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            tensor_create((2,), [1, 2, 3])

    def test_rank_exceeded(self):
        with pytest.raises(RankExceeded):
            tensor_create((1, 1, 1, 1, 1), 0)

    def test_scalar_and_dtypes(self):
        assert tensor_create((), 7.0).shape == ()
        assert tensor_create((2,), 0, dtype="single").dtype == np.float32
        assert tensor_create((2,), 0, dtype="double").dtype == np.float64


class TestMatmul:
    def test_known_product(self):
        out = matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
        assert out.tolist() == [[19, 22], [43, 50]]

    def test_identity_exact(self):
        a = np.array([[5.0, 6], [7, 8]])
        assert np.array_equal(matmul(np.eye(2), a), a)
        assert np.array_equal(matmul(a, np.eye(2)), a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_dtype_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(np.zeros((2, 2), np.float32), np.zeros((2, 2), np.float64))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((40, 60)), rng.standard_normal((60, 30))
        assert np.array_equal(matmul(a, b), matmul(a.copy(), b.copy()))


class TestConv2dSame:
    def test_same_spatial_shape_at_stride_1(self):
        out = conv2d_same(np.zeros((1, 8, 8, 3)), np.zeros((3, 3, 3, 16)), np.zeros(16))
        assert out.shape == (1, 8, 8, 16)

    def test_zero_kernel_gives_bias(self):
        x = np.random.default_rng(1).standard_normal((2, 4, 5, 3))
        b = np.array([1.5, -2.0])
        out = conv2d_same(x, np.zeros((3, 3, 3, 2)), b)
        assert np.allclose(out[..., 0], 1.5) and np.allclose(out[..., 1], -2.0)

    def test_all_ones_kernel_window_sums(self):
        x = np.arange(1.0, 10.0).reshape(1, 3, 3, 1)
        out = conv2d_same(x, np.ones((3, 3, 1, 1)), np.zeros(1))
        assert out[0, 1, 1, 0] == 45.0
        assert out[0, 0, 0, 0] == 12.0

    def test_channel_mismatch(self):
        with pytest.raises(ChannelMismatch):
            conv2d_same(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 4)), np.zeros(4))

    def test_bias_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv2d_same(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 2, 4)), np.zeros(5))

    def test_spatial_preserved_for_odd_and_even_kernels(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            h, w = rng.integers(1, 9, size=2)
            kh, kw = rng.integers(1, 5, size=2)
            x = rng.standard_normal((1, h, w, 2))
            k = rng.standard_normal((kh, kw, 2, 3))
            out = conv2d_same(x, k, np.zeros(3))
            assert out.shape == (1, h, w, 3)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            h, w = rng.integers(1, 7, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            stride = int(rng.integers(1, 3))
            x = rng.standard_normal((n, h, w, cin))
            k = rng.standard_normal((kh, kw, cin, cout))
            b = rng.standard_normal(cout)
            got = conv2d_same(x, k, b, stride)
            want = conv_reference(x, k, b, stride)
            assert got.shape == want.shape
            assert np.abs(got - want).max() < 1e-12

    def test_strided_output_shape(self):
        out = conv2d_same(np.zeros((1, 7, 5, 1)), np.zeros((3, 3, 1, 2)), np.zeros(2), stride=2)
        assert out.shape == (1, 4, 3, 2)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 6, 6, 3))
        k = rng.standard_normal((3, 3, 3, 4))
        b = rng.standard_normal(4)
        assert np.array_equal(conv2d_same(x, k, b), conv2d_same(x.copy(), k.copy(), b.copy()))

    def test_backward_flags_skip_pieces(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 4, 2))
        k = rng.standard_normal((3, 3, 2, 3))
        g = rng.standard_normal((1, 4, 4, 3))
        dx, dk, db = conv2d_same_backward(g, x, k, need_dx=False, need_dk=True, need_db=False)
        assert dx is None and db is None and dk.shape == k.shape


class TestMaxpool2:
    def test_single_window(self):
        out, idx = maxpool2(np.array([1.0, 2, 3, 4]).reshape(1, 2, 2, 1))
        assert out.reshape(()) == 4.0
        assert idx.reshape(()) == 3

    def test_constant_input(self):
        out, _ = maxpool2(np.full((1, 4, 6, 2), 2.5))
        assert out.shape == (1, 2, 3, 2)
        assert (out == 2.5).all()

    def test_floor_mode_drops_odd_edge(self):
        out, _ = maxpool2(np.arange(1.0, 10.0).reshape(1, 3, 3, 1))
        assert out.shape == (1, 1, 1, 1)
        assert out.reshape(()) == 5.0  # max(1, 2, 4, 5)

    def test_tie_break_first_row_major(self):
        out, idx = maxpool2(np.ones((1, 2, 2, 1)))
        assert out.reshape(()) == 1.0
        assert idx.reshape(()) == 0

    def test_too_small(self):
        with pytest.raises(SpatialTooSmall):
            maxpool2(np.zeros((1, 1, 4, 1)))

    def test_backward_routes_to_argmax(self):
        x = np.array([[1.0, 9.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        out, idx = maxpool2(x)
        dx = maxpool2_backward(np.full(out.shape, 5.0), idx, x.shape)
        assert dx.reshape(2, 2).tolist() == [[0.0, 5.0], [0.0, 0.0]]

    def test_backward_zeroes_dropped_edges(self):
        x = np.random.default_rng(0).standard_normal((1, 3, 3, 1))
        out, idx = maxpool2(x)
        dx = maxpool2_backward(np.ones(out.shape), idx, x.shape)
        assert dx[0, 2, :, 0].tolist() == [0.0, 0.0, 0.0]
        assert dx[0, :, 2, 0].tolist() == [0.0, 0.0, 0.0]


class TestRelu:
    def test_sign_cases(self):
        assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]

    def test_all_negative(self):
        assert (relu(np.full((3, 3), -4.0)) == 0).all()

    def test_non_negative_unchanged(self):
        x = np.abs(np.random.default_rng(2).standard_normal((4, 4)))
        assert np.array_equal(relu(x), x)


class TestSoftmaxRows:
    def test_uniform_row(self):
        assert np.allclose(softmax_rows(np.zeros((1, 4))), 0.25)

    def test_extreme_values_stay_finite(self):
        p = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.isfinite(p).all()
        assert p[0, 0] > 0.999999 and p[0, 1] < 1e-6

    def test_closed_form(self):
        p = softmax_rows(np.log(np.array([[1.0, 3.0]])))
        assert np.allclose(p, [[0.25, 0.75]], atol=1e-15)

    def test_rows_sum_to_one(self):
        x = np.random.default_rng(3).standard_normal((20, 7)) * 10
        sums = softmax_rows(x).sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-12
        x32 = x.astype(np.float32)
        assert np.abs(softmax_rows(x32).sum(axis=1) - 1.0).max() < 1e-6

    def test_shift_invariance(self):
        x = np.random.default_rng(4).standard_normal((5, 6))
        shifted = softmax_rows(x + 3.75)
        assert np.abs(shifted - softmax_rows(x)).max() < 1e-12

    def test_outputs_in_unit_interval(self):
        p = softmax_rows(np.random.default_rng(5).standard_normal((10, 5)))
        assert (p > 0).all() and (p <= 1).all()
