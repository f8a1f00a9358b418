"""Feature network tests: configuration arithmetic, forward determinism,
full-network gradient checks and initializer statistics."""
import numpy as np
import numpy.testing as npt
import pytest

from conftest import finite_difference, rel_error
from tcmtl.errors import ConfigError, DimensionError
from tcmtl.network import (FilterBank, LayerSpec, NetConfig, init_filters,
                           net_backward, net_forward, parse_layer_spec)

TINY = NetConfig(input_side=12,
                 layers=(LayerSpec(3, 2, 1, True), LayerSpec(2, 3, 1, True)),
                 feature_dim=8)


def _flatten_bank(bank):
    return [("kernel", i, k) for i, k in enumerate(bank.kernels)] + \
           [("bias", i, b) for i, b in enumerate(bank.biases)] + \
           [("fc_weight", None, bank.fc_weight), ("fc_bias", None, bank.fc_bias)]


class TestNetConfig:
    def test_default_matches_stated_architecture(self):
        cfg = NetConfig()
        assert len(cfg.layers) == 4
        assert sum(l.pool for l in cfg.layers) == 3
        # 60 -> 56 -> 28 -> 26 -> 13 -> 11 -> 10 -> 5
        assert cfg.spatial_chain() == [60, 56, 28, 26, 13, 11, 10, 5]
        assert cfg.flat_dim() == 80 * 25

    def test_bad_chain_rejected(self):
        # conv leaves a 5x5 map, which cannot be 2x2-pooled
        with pytest.raises(ConfigError, match="even"):
            NetConfig(input_side=6, layers=(LayerSpec(2, 4, 1, True),), feature_dim=4)
        with pytest.raises(ConfigError, match="divisible"):
            NetConfig(input_side=6, layers=(LayerSpec(3, 4, 2, False),), feature_dim=4)

    def test_text_round_trip(self):
        cfg = NetConfig(input_side=20,
                        layers=(LayerSpec(5, 6, 1, True), LayerSpec(3, 8, 1, False)),
                        feature_dim=16, init_mode="unit")
        assert NetConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            NetConfig.from_text("feature_dim=4\nlayers=3x2\nbogus=1\n")

    def test_layer_spec_grammar(self):
        assert parse_layer_spec("5x20s2p") == LayerSpec(5, 20, 2, True)
        assert parse_layer_spec("3x8") == LayerSpec(3, 8, 1, False)


class TestForward:
    def test_default_config_layer1_shapes(self):
        cfg = NetConfig()
        bank = init_filters(cfg, 0)
        image = np.random.default_rng(0).standard_normal((1, 60, 60))
        _, cache = net_forward(image, bank, cfg)
        assert cache["stages"][0]["pre"].shape == (20, 56, 56)
        assert cache["stages"][1]["input"].shape == (20, 28, 28)

    def test_zero_image_zero_feature(self):
        bank = init_filters(TINY, 3)
        feature, _ = net_forward(np.zeros((1, 12, 12)), bank, TINY)
        # relu of zeros stays zero through every stage; fc bias is zero
        npt.assert_array_equal(feature, np.zeros(8))

    def test_deterministic(self):
        bank = init_filters(TINY, 3)
        image = np.random.default_rng(7).standard_normal((1, 12, 12))
        f1, _ = net_forward(image, bank, TINY)
        f2, _ = net_forward(image, bank, TINY)
        assert f1.tobytes() == f2.tobytes()

    def test_feature_dim_always_matches_config(self):
        for d in (1, 5, 8):
            cfg = NetConfig(input_side=12, layers=TINY.layers, feature_dim=d)
            feature, _ = net_forward(np.ones((1, 12, 12)), init_filters(cfg, 0), cfg)
            assert feature.shape == (d,)

    def test_wrong_image_shape(self):
        with pytest.raises(DimensionError):
            net_forward(np.zeros((1, 10, 10)), init_filters(TINY, 0), TINY)


class TestBackward:
    def test_zero_grad_feature(self):
        bank = init_filters(TINY, 5)
        image = np.random.default_rng(5).standard_normal((1, 12, 12))
        _, cache = net_forward(image, bank, TINY)
        grads = net_backward(cache, np.zeros(8), bank, TINY)
        for _, _, arr in _flatten_bank(grads):
            npt.assert_array_equal(arr, 0.0)

    def test_full_network_finite_difference(self):
        bank = init_filters(TINY, 11)
        rng = np.random.default_rng(13)
        image = rng.standard_normal((1, 12, 12))
        direction = rng.standard_normal(8)

        def loss_with(bank_mod):
            feature, _ = net_forward(image, bank_mod, TINY)
            return float(feature @ direction)

        _, cache = net_forward(image, bank, TINY)
        grads = net_backward(cache, direction, bank, TINY)

        for kind, i, analytic in _flatten_bank(grads):
            def probe(arr, kind=kind, i=i):
                trial = bank.copy()
                if kind == "kernel":
                    trial.kernels[i] = arr
                elif kind == "bias":
                    trial.biases[i] = arr
                else:
                    setattr(trial, kind, arr)
                return loss_with(trial)

            target = {"kernel": lambda: bank.kernels[i], "bias": lambda: bank.biases[i],
                      "fc_weight": lambda: bank.fc_weight, "fc_bias": lambda: bank.fc_bias}[kind]()
            fd = finite_difference(probe, target.copy())
            assert rel_error(analytic, fd) < 1e-5, f"{kind} {i}"

    def test_weight_decay_gradient_is_2k(self):
        # the decay term tr(K K^T) has gradient 2K for every filter block
        bank = init_filters(TINY, 2)
        for arr in bank.kernels + [bank.fc_weight]:
            fd = finite_difference(lambda v: float(np.sum(v * v)), arr.copy())
            npt.assert_allclose(fd, 2.0 * arr, rtol=1e-6, atol=1e-9)


class TestInit:
    def test_same_seed_identical(self):
        b1, b2 = init_filters(TINY, 42), init_filters(TINY, 42)
        for (_, _, a1), (_, _, a2) in zip(_flatten_bank(b1), _flatten_bank(b2)):
            npt.assert_array_equal(a1, a2)

    def test_different_seed_differs(self):
        b1, b2 = init_filters(TINY, 1), init_filters(TINY, 2)
        assert not np.array_equal(b1.kernels[0], b2.kernels[0])

    def test_biases_zero(self):
        bank = init_filters(TINY, 0)
        for b in bank.biases + [bank.fc_bias]:
            npt.assert_array_equal(b, 0.0)

    def test_raw_draw_statistics(self):
        # a wide fc layer gives >= 1e5 unit-mode draws: mean within 3 sigma/sqrt(n),
        # variance within 5% of 1
        cfg = NetConfig(input_side=12, layers=TINY.layers, feature_dim=8500,
                        init_mode="unit")
        bank = init_filters(cfg, 9)
        draws = bank.fc_weight.ravel()
        assert draws.size >= 1e5
        assert abs(draws.mean()) < 3.0 / np.sqrt(draws.size)
        assert abs(draws.var() - 1.0) < 0.05

    def test_fan_in_scaling(self):
        cfg = NetConfig(input_side=12, layers=TINY.layers, feature_dim=800)
        bank = init_filters(cfg, 9)
        flat = cfg.flat_dim()
        assert abs(bank.fc_weight.var() * flat - 1.0) < 0.1
