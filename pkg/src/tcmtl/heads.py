"""Generalized linear output layer: M landmark regressors and T logistic
attribute classifiers sharing one feature vector, parameterized by a single
D x (M+T) weight matrix.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# attribute probabilities are clamped away from {0,1} when taking logs so the
# cross-entropy stays finite in saturation
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TaskLayout:
    """Task arrangement: M landmark coordinates (2 per point), T attributes
    with names and group labels, and the eye point indices used by the
    inter-ocular error normalization."""
    n_landmark: int
    attr_names: tuple = ()
    attr_groups: tuple = ()
    eye_points: tuple = (0, 1)

    def __post_init__(self):
        if self.n_landmark < 2 or self.n_landmark % 2:
            raise DimensionError(f"landmark coordinate count must be even >= 2, got {self.n_landmark}")
        if len(self.attr_names) != len(self.attr_groups):
            raise DimensionError("attribute names and group labels must align")
        n_points = self.n_landmark // 2
        if not (0 <= self.eye_points[0] < n_points and 0 <= self.eye_points[1] < n_points):
            raise DimensionError(f"eye point indices {self.eye_points} out of range for {n_points} points")

    @property
    def n_attr(self):
        return len(self.attr_names)

    @property
    def n_points(self):
        return self.n_landmark // 2

    @property
    def n_tasks(self):
        return self.n_landmark + self.n_attr

    def group_names(self):
        seen = []
        for g in self.attr_groups:
            if g not in seen:
                seen.append(g)
        return seen

    def group_members(self, group):
        return [t for t, g in enumerate(self.attr_groups) if g == group]

    def subset(self, keep):
        """Layout restricted to the attribute indices in keep (order preserved)."""
        keep = list(keep)
        return TaskLayout(self.n_landmark,
                          tuple(self.attr_names[t] for t in keep),
                          tuple(self.attr_groups[t] for t in keep),
                          self.eye_points)


def default_attribute_layout(n_points=5):
    """A 22-attribute layout in five groups (eyes/nose/mouth/global/pose),
    mirroring the usual auxiliary-attribute arrangement for 5-point data."""
    groups = [("eyes", 5), ("nose", 2), ("mouth", 5), ("global", 5), ("pose", 5)]
    names, labels = [], []
    for group, count in groups:
        for i in range(count):
            names.append(f"{group}_{i}")
            labels.append(group)
    return TaskLayout(2 * n_points, tuple(names), tuple(labels), (0, 1))


@dataclass
class WeightMatrix:
    """D x (M+T) task weights; first M columns regress landmarks, the last T
    feed the attribute logits."""
    data: np.ndarray
    n_landmark: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or not 0 <= self.n_landmark <= self.data.shape[1]:
            raise DimensionError(
                f"weight matrix shape {self.data.shape} with M={self.n_landmark}")
        if not np.all(np.isfinite(self.data)):
            raise DimensionError("weight matrix contains non-finite values")

    @property
    def feature_dim(self):
        return self.data.shape[0]

    @property
    def n_attr(self):
        return self.data.shape[1] - self.n_landmark

    @property
    def landmark_part(self):
        return self.data[:, :self.n_landmark]

    @property
    def attribute_part(self):
        return self.data[:, self.n_landmark:]

    def copy(self):
        return WeightMatrix(self.data.copy(), self.n_landmark)


def init_weights(feature_dim, layout, seed, scale_mode="fan_in"):
    """Column-wise standard normal weights; 'fan_in' divides by sqrt(D).

    Each column gets its own (seed, column) stream, so variants that share
    the landmark tasks but differ in attribute count start from identical
    landmark columns under the same seed.
    """
    cols = [np.random.default_rng((seed, j)).standard_normal(feature_dim)
            for j in range(layout.n_tasks)]
    w = np.stack(cols, axis=1) if cols else np.zeros((feature_dim, 0))
    if scale_mode == "fan_in":
        w /= np.sqrt(feature_dim)
    return WeightMatrix(w, layout.n_landmark)


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_cross_entropy(probs, labels):
    """-(l ln p + (1-l) ln(1-p)) elementwise, with probabilities clamped to
    [PROB_FLOOR, 1-PROB_FLOOR]."""
    p = np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    labels = np.asarray(labels, dtype=np.float64)
    return -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))


def predict_landmarks(x, weights):
    """Mean landmark prediction o = W_M^T x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (weights.feature_dim,):
        raise DimensionError(f"feature dim {x.shape} vs weights {weights.feature_dim}")
    return weights.landmark_part.T @ x


def predict_attributes(x, weights):
    """Per-attribute probabilities sigmoid(W_T^T x), each in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (weights.feature_dim,):
        raise DimensionError(f"feature dim {x.shape} vs weights {weights.feature_dim}")
    return sigmoid(weights.attribute_part.T @ x)


@dataclass
class HeadGradients:
    grad_w_landmark: np.ndarray
    grad_w_attribute: np.ndarray
    grad_x: np.ndarray


def head_gradients(x, weights, y_true, labels, mask, lambdas):
    """Gradients of the per-sample data loss

        ||y - W_M^T x||^2 + sum_t lambda_t * mask_t * CE_t

    w.r.t. W_M, W_T and x. These are true loss gradients (an SGD step
    subtracts them); masked attributes contribute zero everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    m, t = weights.n_landmark, weights.n_attr
    if y_true.shape != (m,):
        raise DimensionError(f"landmark target shape {y_true.shape}, expected ({m},)")
    if labels.shape != (t,) or mask.shape != (t,) or lambdas.shape != (t,):
        raise DimensionError("attribute labels, mask and coefficients must all have length T")

    residual = predict_landmarks(x, weights) - y_true
    grad_w_m = 2.0 * np.outer(x, residual)
    if t:
        probs = predict_attributes(x, weights)
        coeff = lambdas * mask * (probs - labels)
        grad_w_t = np.outer(x, coeff)
        grad_x = 2.0 * (weights.landmark_part @ residual) + weights.attribute_part @ coeff
    else:
        grad_w_t = np.zeros((weights.feature_dim, 0))
        grad_x = 2.0 * (weights.landmark_part @ residual)
    return HeadGradients(grad_w_m, grad_w_t, grad_x)


def batch_head_outputs(features, weights):
    """Batched predictions for features stacked as rows (B, D).

    Returns (landmark predictions (B, M), attribute probabilities (B, T)).
    """
    o = features @ weights.landmark_part
    probs = sigmoid(features @ weights.attribute_part) if weights.n_attr else \
        np.zeros((features.shape[0], 0))
    return o, probs


def batch_gradients_from_outputs(features, weights, o, probs, y_true, labels, mask, lambdas):
    """Gradient math shared by batch_head_gradients and the trainer, starting
    from already computed head outputs.

    Returns (grad_w_landmark, grad_w_attribute, grad_x). The W gradients are
    batch means; grad_x rows are per-sample (each feeds one backward pass,
    the 1/B lands on the accumulated filter gradients).
    """
    b = features.shape[0]
    residual = o - y_true
    grad_w_m = 2.0 * features.T @ residual / b
    if weights.n_attr:
        coeff = (probs - labels) * mask * lambdas
        grad_w_t = features.T @ coeff / b
        grad_x = 2.0 * residual @ weights.landmark_part.T + coeff @ weights.attribute_part.T
    else:
        grad_w_t = np.zeros((weights.feature_dim, 0))
        grad_x = 2.0 * residual @ weights.landmark_part.T
    return grad_w_m, grad_w_t, grad_x


def batch_head_gradients(features, weights, y_true, labels, mask, lambdas):
    """Batch-averaged version of head_gradients; features are rows of (B, D)."""
    o, probs = batch_head_outputs(features, weights)
    return batch_gradients_from_outputs(features, weights, o, probs, y_true,
                                        labels, mask, lambdas)
