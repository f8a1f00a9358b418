"""Objective assembly tests: term-by-term oracle, additivity, covariance
penalty against a naive-inverse evaluation."""
import numpy as np
import numpy.testing as npt
import pytest

from tcmtl import coefficients as coeff
from tcmtl import covariance as cov
from tcmtl import objective
from tcmtl.data import Sample
from tcmtl.errors import NumericError
from tcmtl.heads import TaskLayout, WeightMatrix
from tcmtl.network import LayerSpec, NetConfig, init_filters
from tcmtl.trainer import ModelState

CFG = NetConfig(input_side=8, layers=(LayerSpec(3, 2, 1, True),), feature_dim=4)


def _random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def _make_state(rng, m=2, t=2, lambdas=None):
    layout = TaskLayout(m, tuple(f"a{i}" for i in range(t)), tuple("g" for _ in range(t)),
                        eye_points=(0, 0) if m < 4 else (0, 1))
    filters = init_filters(CFG, 0)
    weights = WeightMatrix(rng.standard_normal((4, m + t)), m)
    upsilon = cov.TaskCovariance(_random_spd(rng, m + t) / (m + t) ** 2)
    lam = np.ones(t) if lambdas is None else np.asarray(lambdas, float)
    coefficients = coeff.CoefficientState(lam, np.full(t, np.nan))
    return ModelState(CFG, filters, weights, upsilon, coefficients, layout)


def _make_samples(rng, state, n):
    m, t = state.layout.n_landmark, state.layout.n_attr
    out = []
    for _ in range(n):
        out.append(Sample(rng.standard_normal((1, 8, 8)),
                          rng.uniform(0, 1, m),
                          rng.integers(0, 2, t).astype(float),
                          np.ones(t)))
    return out


class TestCovariancePenalty:
    def test_identity_gives_frobenius(self, rng):
        w = rng.standard_normal((5, 3))
        npt.assert_allclose(objective.covariance_penalty(w, np.eye(3)),
                            np.sum(w * w), rtol=1e-12)

    def test_zero_weights(self, rng):
        npt.assert_allclose(objective.covariance_penalty(np.zeros((4, 2)),
                                                         _random_spd(rng, 2)), 0.0)

    def test_matches_naive_inverse(self, rng):
        w = rng.standard_normal((3, 2))
        u = _random_spd(rng, 2)
        naive = np.trace(w @ np.linalg.inv(u) @ w.T)
        assert abs(objective.covariance_penalty(w, u) - naive) < 1e-10

    def test_singular_raises(self, rng):
        with pytest.raises(NumericError):
            objective.covariance_penalty(rng.standard_normal((3, 2)), np.zeros((2, 2)))


class TestComputeLoss:
    def test_single_sample_quarter(self, rng):
        # M=1, T=0, target 1, prediction 0.5 -> landmark term (1-0.5)^2 = 0.25
        layout = TaskLayout(2, (), (), eye_points=(0, 0))
        filters = init_filters(CFG, 0)
        state = ModelState(CFG, filters, WeightMatrix(np.zeros((4, 2)), 2),
                           cov.initial_covariance(2),
                           coeff.CoefficientState(np.zeros(0), np.zeros(0)), layout)
        sample = Sample(rng.standard_normal((1, 8, 8)), np.array([1.0, 0.0]),
                        np.zeros(0), np.zeros(0))
        # force a 0.5 prediction on the first coordinate via the fc bias path:
        # zero weights give prediction 0, so use a weight matrix with known output
        feature = state.forward(sample.image)
        w = np.zeros((4, 2))
        w[:, 0] = 0.5 * feature / (feature @ feature)
        state.weights = WeightMatrix(w, 2)
        breakdown = objective.compute_loss([sample], state, include_regularizers=False)
        npt.assert_allclose(breakdown.landmark_sq_loss, 0.25 + 0.0, rtol=1e-10)
        assert breakdown.total == breakdown.landmark_sq_loss

    def test_perfect_fit_no_regularizers_zero(self, rng):
        state = _make_state(rng, m=2, t=0)
        sample = _make_samples(rng, state, 1)[0]
        feature = state.forward(sample.image)
        # choose W to reproduce the targets exactly
        w = np.outer(feature / (feature @ feature), sample.landmarks)
        state.weights = WeightMatrix(w, 2)
        breakdown = objective.compute_loss([sample], state, include_regularizers=False)
        npt.assert_allclose(breakdown.total, 0.0, atol=1e-20)

    def test_term_by_term_oracle(self, rng):
        state = _make_state(rng, m=2, t=2, lambdas=[0.7, 0.2])
        samples = _make_samples(rng, state, 3)
        breakdown = objective.compute_loss(samples, state)

        # independent evaluation of each term
        feats = np.stack([state.forward(s.image) for s in samples])
        w = state.weights.data
        landmark = np.mean([np.sum((s.landmarks - w[:, :2].T @ f) ** 2)
                            for s, f in zip(samples, feats)])
        ce_terms = np.zeros(2)
        for s, f in zip(samples, feats):
            p = 1.0 / (1.0 + np.exp(-(w[:, 2:].T @ f)))
            ce_terms += -(s.attributes * np.log(p) + (1 - s.attributes) * np.log(1 - p))
        ce_terms /= len(samples)
        weighted = ce_terms @ np.array([0.7, 0.2])
        ridged = state.covariance.ridged()
        penalty = np.trace(w @ np.linalg.inv(ridged) @ w.T)
        decay = sum(np.sum(k * k) for k in state.filters.kernels) + \
            np.sum(state.filters.fc_weight ** 2)
        expected = landmark + weighted + penalty + decay

        npt.assert_allclose(breakdown.landmark_sq_loss, landmark, rtol=1e-12)
        npt.assert_allclose(breakdown.attribute_ce_per_task, ce_terms, rtol=1e-12)
        npt.assert_allclose(breakdown.attribute_ce_weighted, weighted, rtol=1e-12)
        npt.assert_allclose(breakdown.covariance_penalty, penalty, rtol=1e-9)
        npt.assert_allclose(breakdown.filter_decay, decay, rtol=1e-12)
        assert abs(breakdown.total - expected) < 1e-12 * max(1.0, abs(expected))

    def test_additive_over_batch(self, rng):
        state = _make_state(rng, m=2, t=2)
        samples = _make_samples(rng, state, 4)
        full = objective.compute_loss(samples, state, include_regularizers=False)
        singles = [objective.compute_loss([s], state, include_regularizers=False)
                   for s in samples]
        npt.assert_allclose(full.landmark_sq_loss,
                            np.mean([s.landmark_sq_loss for s in singles]), rtol=1e-12)
        npt.assert_allclose(full.attribute_ce_weighted,
                            np.mean([s.attribute_ce_weighted for s in singles]), rtol=1e-12)

    def test_zero_lambda_ignores_labels(self, rng):
        state = _make_state(rng, m=2, t=2, lambdas=[0.01, 0.01])
        state.coefficients.lambdas[:] = 0.01
        samples = _make_samples(rng, state, 2)
        flipped = [Sample(s.image, s.landmarks, 1.0 - s.attributes, s.attr_mask)
                   for s in samples]
        state.coefficients.lambdas[:] = 1e-300  # effectively zero weight
        a = objective.compute_loss(samples, state).total
        b = objective.compute_loss(flipped, state).total
        npt.assert_allclose(a, b, rtol=1e-12)

    def test_total_is_sum_of_parts(self, rng):
        state = _make_state(rng)
        breakdown = objective.compute_loss(_make_samples(rng, state, 2), state)
        assert breakdown.total == (breakdown.landmark_sq_loss +
                                   breakdown.attribute_ce_weighted +
                                   breakdown.covariance_penalty +
                                   breakdown.filter_decay)
