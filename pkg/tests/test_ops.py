"""Kernel-level tests: shapes, hand-computed values, finite-difference
oracles, and parity between the compiled and numpy backends."""
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference, rel_error
from tcmtl import kernels_py, ops
from tcmtl.errors import DimensionError


class TestConvForward:
    def test_first_layer_shape(self):
        # 60x60 input, 20 5x5 filters, stride 1 -> 20x56x56
        inp = np.zeros((1, 60, 60))
        kernels = np.zeros((20, 1, 5, 5))
        out = ops.conv2d_forward(inp, kernels, ops.ConvSpec(1, 20, 5, 1))
        assert out.shape == (20, 56, 56)

    def test_identity_kernel(self, rng):
        inp = rng.standard_normal((1, 3, 3))
        kernels = np.ones((1, 1, 1, 1))
        out = ops.conv2d_forward(inp, kernels, ops.ConvSpec(1, 1, 1, 1))
        npt.assert_array_equal(out, inp)

    def test_ones_window_sum(self):
        inp = np.ones((1, 3, 3))
        kernels = np.ones((1, 1, 2, 2))
        out = ops.conv2d_forward(inp, kernels, ops.ConvSpec(1, 1, 2, 1))
        npt.assert_array_equal(out, np.full((1, 2, 2), 4.0))

    def test_bias_added_per_map(self, rng):
        inp = rng.standard_normal((1, 4, 4))
        kernels = np.zeros((3, 1, 2, 2))
        out = ops.conv2d_forward(inp, kernels, ops.ConvSpec(1, 3, 2, 1), bias=np.array([1.0, -2.0, 0.5]))
        npt.assert_allclose(out[0], 1.0)
        npt.assert_allclose(out[1], -2.0)
        npt.assert_allclose(out[2], 0.5)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError, match="channel"):
            ops.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)),
                               ops.ConvSpec(3, 1, 2, 1))

    def test_input_smaller_than_kernel(self):
        with pytest.raises(DimensionError, match="height"):
            ops.conv2d_forward(np.zeros((1, 2, 8)), np.zeros((1, 1, 3, 3)),
                               ops.ConvSpec(1, 1, 3, 1))

    def test_stride_must_divide(self):
        with pytest.raises(DimensionError, match="stride"):
            ops.conv2d_forward(np.zeros((1, 6, 6)), np.zeros((1, 1, 3, 3)),
                               ops.ConvSpec(1, 1, 3, 2))

    def test_one_hot_kernel_is_shifted_crop(self, rng):
        inp = rng.standard_normal((1, 6, 6))
        for p in range(3):
            for q in range(3):
                kernels = np.zeros((1, 1, 3, 3))
                kernels[0, 0, p, q] = 1.0
                out = ops.conv2d_forward(inp, kernels, ops.ConvSpec(1, 1, 3, 1))
                npt.assert_array_equal(out[0], inp[0, p:p + 4, q:q + 4])


class TestConvBackward:
    def test_zero_grad_out(self, rng):
        inp = rng.standard_normal((2, 4, 4))
        kernels = rng.standard_normal((3, 2, 2, 2))
        spec = ops.ConvSpec(2, 3, 2, 1)
        ginp, gker, gbias = ops.conv2d_backward(np.zeros((3, 3, 3)), inp, kernels, spec)
        npt.assert_array_equal(ginp, 0.0)
        npt.assert_array_equal(gker, 0.0)
        npt.assert_array_equal(gbias, 0.0)

    def test_single_pixel_chain_rule(self, rng):
        # 1x1 kernel: grad_kernel at the only filter entry equals the input
        # pixel under the nonzero grad_out position
        inp = rng.standard_normal((1, 3, 3))
        kernels = rng.standard_normal((1, 1, 1, 1))
        spec = ops.ConvSpec(1, 1, 1, 1)
        gout = np.zeros((1, 3, 3))
        gout[0, 1, 2] = 1.0
        _, gker, _ = ops.conv2d_backward(gout, inp, kernels, spec)
        npt.assert_allclose(gker[0, 0, 0, 0], inp[0, 1, 2])

    @pytest.mark.parametrize("stride", [1, 2])
    def test_finite_difference(self, rng, stride):
        inp = rng.standard_normal((1, 4, 4))
        kernels = rng.standard_normal((2, 1, 2, 2))
        spec = ops.ConvSpec(1, 2, 2, stride)
        gout = rng.standard_normal(ops.conv2d_forward(inp, kernels, spec).shape)

        def loss_wrt_input(x):
            return float(np.sum(ops.conv2d_forward(x, kernels, spec) * gout))

        def loss_wrt_kernels(k):
            return float(np.sum(ops.conv2d_forward(inp, k, spec) * gout))

        ginp, gker, _ = ops.conv2d_backward(gout, inp, kernels, spec)
        assert rel_error(ginp, finite_difference(loss_wrt_input, inp)) < 1e-6
        assert rel_error(gker, finite_difference(loss_wrt_kernels, kernels)) < 1e-6

    def test_bias_gradient_sums_grad_out(self, rng):
        inp = rng.standard_normal((1, 4, 4))
        kernels = rng.standard_normal((2, 1, 2, 2))
        spec = ops.ConvSpec(1, 2, 2, 1)
        gout = rng.standard_normal((2, 3, 3))
        _, _, gbias = ops.conv2d_backward(gout, inp, kernels, spec)
        npt.assert_allclose(gbias, gout.sum(axis=(1, 2)))


class TestMaxPool:
    def test_fig_shape(self):
        out, idx = ops.maxpool2_forward(np.zeros((20, 56, 56)))
        assert out.shape == (20, 28, 28)
        assert idx.shape == (20, 28, 28)

    def test_constant_input(self):
        out, _ = ops.maxpool2_forward(np.full((1, 4, 4), 3.5))
        npt.assert_array_equal(out, np.full((1, 2, 2), 3.5))

    def test_window_max_and_routing(self):
        inp = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out, idx = ops.maxpool2_forward(inp)
        assert out[0, 0, 0] == 4.0
        ginp = ops.maxpool2_backward(np.array([[[7.0]]]), idx, inp.shape)
        npt.assert_array_equal(ginp, np.array([[[0.0, 0.0], [0.0, 7.0]]]))

    def test_brute_force_window_positions(self):
        # the max can sit at any of the 4 window positions; gradient must
        # route only there
        for pos in range(4):
            inp = np.zeros((1, 2, 2))
            inp[0, pos // 2, pos % 2] = 1.0
            out, idx = ops.maxpool2_forward(inp)
            assert out[0, 0, 0] == 1.0
            ginp = ops.maxpool2_backward(np.ones((1, 1, 1)), idx, (1, 2, 2))
            expected = np.zeros((1, 2, 2))
            expected[0, pos // 2, pos % 2] = 1.0
            npt.assert_array_equal(ginp, expected)

    def test_tie_breaks_to_first_row_major(self):
        out, idx = ops.maxpool2_forward(np.ones((1, 2, 2)))
        assert idx[0, 0, 0] == 0  # first element in row-major scan

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError, match="even"):
            ops.maxpool2_forward(np.zeros((1, 3, 4)))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_mass_conservation(self, seed):
        r = np.random.default_rng(seed)
        inp = r.standard_normal((2, 6, 6))
        gout = r.standard_normal((2, 3, 3))
        _, idx = ops.maxpool2_forward(inp)
        ginp = ops.maxpool2_backward(gout, idx, inp.shape)
        npt.assert_allclose(ginp.sum(), gout.sum(), rtol=1e-12)
        # gradient lands only on recorded argmax cells
        assert np.count_nonzero(ginp) <= gout.size


class TestRelu:
    def test_all_negative(self):
        npt.assert_array_equal(ops.relu_forward(-np.ones((2, 2))), 0.0)

    def test_all_positive_identity(self, rng):
        x = np.abs(rng.standard_normal((3, 3))) + 0.1
        npt.assert_array_equal(ops.relu_forward(x), x)

    def test_backward_masks_nonpositive(self):
        x = np.array([-1.0, 0.0, 2.0])
        g = ops.relu_backward(np.ones(3), x)
        npt.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_finite_difference_away_from_kink(self, rng):
        x = rng.standard_normal(20)
        x[np.abs(x) < 0.05] += 0.2  # keep clear of the kink
        gout = rng.standard_normal(20)

        def loss(v):
            return float(np.sum(ops.relu_forward(v) * gout))

        assert rel_error(ops.relu_backward(gout, x), finite_difference(loss, x)) < 1e-6


class TestFullyConnected:
    def test_identity_weights(self, rng):
        x = rng.standard_normal(4)
        npt.assert_array_equal(ops.fc_forward(x, np.eye(4), np.zeros(4)), x)

    def test_zero_weights_gives_bias(self, rng):
        bias = rng.standard_normal(3)
        npt.assert_array_equal(ops.fc_forward(np.ones(5), np.zeros((3, 5)), bias), bias)

    def test_finite_difference(self, rng):
        x = rng.standard_normal(4)
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(3)
        gout = rng.standard_normal(3)

        gx, gw, gb = ops.fc_backward(gout, x, w)
        assert rel_error(gx, finite_difference(
            lambda v: float(ops.fc_forward(v, w, b) @ gout), x)) < 1e-6
        assert rel_error(gw, finite_difference(
            lambda v: float(ops.fc_forward(x, v, b) @ gout), w)) < 1e-6
        assert rel_error(gb, finite_difference(
            lambda v: float(ops.fc_forward(x, w, v) @ gout), b)) < 1e-6

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            ops.fc_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))
        with pytest.raises(DimensionError):
            ops.fc_forward(np.zeros(4), np.zeros((2, 4)), np.zeros(3))


class TestBackendParity:
    """The compiled extension and the numpy fallback must agree."""

    def _both(self):
        backends = [kernels_py]
        try:
            from tcmtl import _kernels_c
            backends.append(_kernels_c)
        except ImportError:
            pytest.skip("compiled extension not built")
        return backends

    def test_conv_agreement(self, rng):
        py, cy = self._both()
        inp = np.ascontiguousarray(rng.standard_normal((3, 9, 9)))
        ker = np.ascontiguousarray(rng.standard_normal((4, 3, 3, 3)))
        outs = []
        for mod in (py, cy):
            out = np.empty((4, 7, 7))
            mod.conv2d_forward(inp, ker, 1, out)
            outs.append(out)
        npt.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-13)

        gout = np.ascontiguousarray(rng.standard_normal((4, 7, 7)))
        for fn_name, shape in [("conv2d_backward_kernels", ker.shape),
                               ("conv2d_backward_input", inp.shape)]:
            grads = []
            for mod in (py, cy):
                g = np.zeros(shape)
                if fn_name == "conv2d_backward_kernels":
                    getattr(mod, fn_name)(gout, inp, 3, 1, g)
                else:
                    getattr(mod, fn_name)(gout, ker, 1, g)
                grads.append(g)
            npt.assert_allclose(grads[0], grads[1], rtol=1e-12, atol=1e-13)

    def test_pool_agreement_including_ties(self, rng):
        py, cy = self._both()
        inp = rng.standard_normal((2, 8, 8))
        inp[0, :4, :4] = 1.0  # force ties
        inp = np.ascontiguousarray(inp)
        results = []
        for mod in (py, cy):
            out = np.empty((2, 4, 4))
            idx = np.empty((2, 4, 4), dtype=np.int64)
            mod.maxpool2_forward(inp, out, idx)
            results.append((out, idx))
        npt.assert_array_equal(results[0][0], results[1][0])
        npt.assert_array_equal(results[0][1], results[1][1])
