"""Multi-task head tests: predictions, stable sigmoid, per-sample gradient
oracles and masking behavior."""
import numpy as np
import numpy.testing as npt
import pytest

from conftest import finite_difference, rel_error
from tcmtl import heads
from tcmtl.errors import DimensionError
from tcmtl.heads import (TaskLayout, WeightMatrix, batch_head_gradients,
                         binary_cross_entropy, default_attribute_layout,
                         head_gradients, predict_attributes, predict_landmarks)


def _data_loss(x, w_data, m, y, labels, mask, lambdas):
    """Per-sample data terms of the objective, written independently."""
    w_m, w_t = w_data[:, :m], w_data[:, m:]
    loss = float(np.sum((y - w_m.T @ x) ** 2))
    if w_t.shape[1]:
        probs = 1.0 / (1.0 + np.exp(-(w_t.T @ x)))
        ce = -(labels * np.log(probs) + (1 - labels) * np.log(1 - probs))
        loss += float(np.sum(lambdas * mask * ce))
    return loss


class TestLayout:
    def test_default_layout_covers_22_attributes(self):
        layout = default_attribute_layout()
        assert layout.n_landmark == 10
        assert layout.n_attr == 22
        assert layout.group_names() == ["eyes", "nose", "mouth", "global", "pose"]
        assert len(layout.group_members("mouth")) == 5

    def test_odd_coordinate_count_rejected(self):
        with pytest.raises(DimensionError):
            TaskLayout(5)

    def test_subset_preserves_order(self):
        layout = default_attribute_layout()
        sub = layout.subset(layout.group_members("nose"))
        assert sub.n_attr == 2
        assert all(g == "nose" for g in sub.attr_groups)


class TestPredictions:
    def test_zero_weights_zero_landmarks(self):
        w = WeightMatrix(np.zeros((3, 4)), n_landmark=2)
        npt.assert_array_equal(predict_landmarks(np.ones(3), w), np.zeros(2))

    def test_hand_dot_product(self):
        w = WeightMatrix(np.array([[0.3], [0.2]]), n_landmark=1)
        npt.assert_allclose(predict_landmarks(np.array([1.0, 1.0]), w), [0.5])

    def test_duplicate_columns_duplicate_outputs(self, rng):
        col = rng.standard_normal(4)
        w = WeightMatrix(np.stack([col, col], axis=1), n_landmark=2)
        o = predict_landmarks(rng.standard_normal(4), w)
        assert o[0] == o[1]

    def test_sigmoid_values(self):
        w = WeightMatrix(np.array([[1.0]]), n_landmark=0)
        npt.assert_allclose(predict_attributes(np.array([0.0]), w), [0.5])
        npt.assert_allclose(predict_attributes(np.array([20.0]), w), [1.0], atol=1e-8)
        npt.assert_allclose(predict_attributes(np.array([1.0]), w),
                            [0.7310585786300049], rtol=1e-12)

    def test_sigmoid_extreme_logits_stay_finite(self):
        w = WeightMatrix(np.array([[1.0]]), n_landmark=0)
        for logit in (-700.0, 700.0):
            p = predict_attributes(np.array([logit]), w)
            assert np.isfinite(p).all()
            ce = binary_cross_entropy(p, np.array([1.0]))
            assert np.isfinite(ce).all()


class TestGradients:
    def test_perfect_predictions_zero_gradient(self):
        # landmark residual zero and saturated-correct attribute probabilities
        x = np.array([1.0, 2.0])
        w = np.zeros((2, 3))
        w[:, 0] = [0.2, 0.4]   # prediction = 1.0
        w[:, 1] = [10.0, 10.0]  # logit 30 -> prob ~ 1, label 1
        w[:, 2] = [-10.0, -10.0]  # logit -30 -> prob ~ 0, label 0
        wm = WeightMatrix(w, n_landmark=1)
        g = head_gradients(x, wm, np.array([1.0]), np.array([1.0, 0.0]),
                           np.ones(2), np.ones(2))
        npt.assert_allclose(g.grad_w_landmark, 0.0, atol=1e-10)
        npt.assert_allclose(g.grad_w_attribute, 0.0, atol=1e-10)
        npt.assert_allclose(g.grad_x, 0.0, atol=1e-9)

    def test_zero_lambda_kills_attribute_gradient(self, rng):
        wm = WeightMatrix(rng.standard_normal((3, 4)), n_landmark=2)
        g = head_gradients(rng.standard_normal(3), wm, rng.standard_normal(2),
                           np.array([1.0, 0.0]), np.ones(2), np.zeros(2))
        npt.assert_array_equal(g.grad_w_attribute, 0.0)

    def test_doubling_lambda_doubles_attribute_column(self, rng):
        wm = WeightMatrix(rng.standard_normal((3, 4)), n_landmark=2)
        x = rng.standard_normal(3)
        y = rng.standard_normal(2)
        labels = np.array([1.0, 0.0])
        lam = np.array([0.3, 0.5])
        g1 = head_gradients(x, wm, y, labels, np.ones(2), lam)
        g2 = head_gradients(x, wm, y, labels, np.ones(2), 2.0 * lam)
        npt.assert_allclose(g2.grad_w_attribute, 2.0 * g1.grad_w_attribute, rtol=1e-12)

    def test_finite_difference_oracle(self, rng):
        d, m, t = 3, 2, 2
        x = rng.standard_normal(d)
        w = rng.standard_normal((d, m + t))
        y = rng.standard_normal(m)
        labels = rng.integers(0, 2, t).astype(float)
        mask = np.ones(t)
        lam = rng.uniform(0.1, 1.0, t)
        wm = WeightMatrix(w, m)
        g = head_gradients(x, wm, y, labels, mask, lam)

        fd_w = finite_difference(
            lambda v: _data_loss(x, v, m, y, labels, mask, lam), w.copy())
        fd_x = finite_difference(
            lambda v: _data_loss(v, w, m, y, labels, mask, lam), x.copy())
        assert rel_error(g.grad_w_landmark, fd_w[:, :m]) < 1e-6
        assert rel_error(g.grad_w_attribute, fd_w[:, m:]) < 1e-6
        assert rel_error(g.grad_x, fd_x) < 1e-6

    def test_masked_attribute_contributes_nothing(self, rng):
        wm = WeightMatrix(rng.standard_normal((3, 4)), n_landmark=2)
        x = rng.standard_normal(3)
        y = rng.standard_normal(2)
        lam = np.ones(2)
        g_masked = head_gradients(x, wm, y, np.array([1.0, 1.0]),
                                  np.array([1.0, 0.0]), lam)
        g_flipped = head_gradients(x, wm, y, np.array([1.0, 0.0]),
                                   np.array([1.0, 0.0]), lam)
        # label of the masked task is irrelevant
        npt.assert_array_equal(g_masked.grad_w_attribute, g_flipped.grad_w_attribute)
        npt.assert_array_equal(g_masked.grad_x, g_flipped.grad_x)

    def test_squared_loss_gradient_vanishes_iff_residual_does(self, rng):
        wm = WeightMatrix(rng.standard_normal((3, 2)), n_landmark=2)
        x = rng.standard_normal(3)
        x[np.abs(x) < 0.1] = 0.5
        y_exact = predict_landmarks(x, wm)
        g = head_gradients(x, wm, y_exact, np.zeros(0), np.zeros(0), np.zeros(0))
        npt.assert_allclose(g.grad_w_landmark, 0.0, atol=1e-12)
        g2 = head_gradients(x, wm, y_exact + 0.5, np.zeros(0), np.zeros(0), np.zeros(0))
        assert np.abs(g2.grad_w_landmark).max() > 0

    def test_batch_matches_per_sample_mean(self, rng):
        d, m, t, b = 4, 2, 3, 5
        wm = WeightMatrix(rng.standard_normal((d, m + t)), m)
        feats = rng.standard_normal((b, d))
        y = rng.standard_normal((b, m))
        labels = rng.integers(0, 2, (b, t)).astype(float)
        mask = rng.integers(0, 2, (b, t)).astype(float)
        lam = rng.uniform(0.1, 1.0, t)
        gwm, gwt, gx = batch_head_gradients(feats, wm, y, labels, mask, lam)
        per = [head_gradients(feats[i], wm, y[i], labels[i], mask[i], lam) for i in range(b)]
        npt.assert_allclose(gwm, np.mean([p.grad_w_landmark for p in per], axis=0), rtol=1e-12)
        npt.assert_allclose(gwt, np.mean([p.grad_w_attribute for p in per], axis=0), rtol=1e-12)
        for i in range(b):
            npt.assert_allclose(gx[i], per[i].grad_x, rtol=1e-12)
