import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionforge.errors import ConfigError, ShapeError
from lesionforge.tensor import (col2im, default_dtype, im2col, matmul,
                                set_default_dtype, tensor_new)


class TestTensorNew:
    def test_zero_fill(self):
        t = tensor_new([2, 2], 0)
        assert t.shape == (2, 2)
        assert np.array_equal(t, np.zeros((2, 2)))

    def test_value_list_roundtrip(self):
        t = tensor_new([3], [1, 2, 3])
        assert np.array_equal(t, np.array([1.0, 2.0, 3.0], dtype=np.float32))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tensor_new([2], [1, 2, 3])

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            tensor_new([0, 3], 1.0)
        with pytest.raises(ShapeError):
            tensor_new([], 1.0)

    def test_readback_lossless(self):
        values = [0.125, -7.5, 3.0, 42.0, 1e-3, 9.0]
        t = tensor_new([2, 3], values, dtype=np.float64)
        assert t.reshape(-1).tolist() == values


class TestDefaultDtype:
    def test_switch_to_float64_and_back(self):
        assert default_dtype() == np.float32
        try:
            set_default_dtype("float64")
            assert tensor_new([2], 0.0).dtype == np.float64
            from lesionforge.layers import Dense
            assert Dense(3, 2).params["W"].dtype == np.float64
        finally:
            set_default_dtype(np.float32)
        assert tensor_new([2], 0.0).dtype == np.float32

    def test_rejects_non_float(self):
        with pytest.raises(ConfigError):
            set_default_dtype(np.int32)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_row_times_column(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.0

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_matches_triple_loop_oracle(self, rng):
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        ref = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    ref[i, j] += a[i, k] * b[k, j]
        assert np.allclose(matmul(a, b), ref, atol=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_associativity_float32(self, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(-1, 1, (3, 4)).astype(np.float32)
        b = r.uniform(-1, 1, (4, 5)).astype(np.float32)
        c = r.uniform(-1, 1, (5, 2)).astype(np.float32)
        assert np.abs(matmul(matmul(a, b), c) - matmul(a, matmul(b, c))).max() < 1e-4


def _enumerate_patches(x, kh, kw, stride, pad):
    """Independent sliding-window oracle for im2col."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.zeros((c * kh * kw, n * ho * wo), dtype=x.dtype)
    col = 0
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                cols[:, col] = patch.reshape(-1)
                col += 1
    return cols


class TestIm2col:
    def test_single_receptive_field(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        cols = im2col(x, 2, 2, 1, 0)
        assert cols.shape == (4, 1)
        assert cols[:, 0].tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_1x1_kernel_is_reshape(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        cols = im2col(x, 1, 1, 1, 0)
        assert cols.shape == (3, 2 * 16)
        # Column (n, i, j) must equal x[n, :, i, j].
        ref = x.transpose(1, 0, 2, 3).reshape(3, -1)
        assert np.array_equal(cols, ref)

    @pytest.mark.parametrize("kh,kw,stride,pad,shape", [
        (2, 2, 2, 0, (1, 1, 4, 4)),
        (3, 3, 1, 1, (2, 2, 5, 5)),
        (2, 3, 1, 0, (1, 3, 4, 5)),
    ])
    def test_matches_patch_enumeration(self, rng, kh, kw, stride, pad, shape):
        x = rng.standard_normal(shape)
        assert np.array_equal(im2col(x, kh, kw, stride, pad),
                              _enumerate_patches(x, kh, kw, stride, pad))

    def test_non_integral_output_errors(self):
        with pytest.raises(ShapeError):
            im2col(np.zeros((1, 1, 5, 5)), 2, 2, 2, 0)

    def test_kernel_larger_than_input_errors(self):
        with pytest.raises(ShapeError):
            im2col(np.zeros((1, 1, 2, 2)), 3, 3, 1, 0)


class TestCol2im:
    @pytest.mark.parametrize("kh,kw,stride,pad,shape", [
        (2, 2, 1, 0, (1, 2, 4, 4)),
        (3, 3, 1, 1, (2, 1, 5, 5)),
        (2, 2, 2, 1, (1, 2, 4, 4)),
    ])
    def test_adjoint_of_im2col(self, rng, kh, kw, stride, pad, shape):
        x = rng.standard_normal(shape)
        cols = im2col(x, kh, kw, stride, pad)
        g = rng.standard_normal(cols.shape)
        lhs = float((cols * g).sum())
        rhs = float((x * col2im(g, shape, kh, kw, stride, pad)).sum())
        assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))

    def test_ones_count_patch_multiplicity(self):
        # 3x3 input, 2x2 kernel, stride 1: the center pixel sits in 4 patches.
        shape = (1, 1, 3, 3)
        cols = np.ones((4, 4))
        counts = col2im(cols, shape, 2, 2, 1, 0)[0, 0]
        assert counts[1, 1] == 4
        assert counts[0, 0] == 1
        assert counts[0, 1] == 2

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            col2im(np.zeros((4, 5)), (1, 1, 3, 3), 2, 2, 1, 0)
