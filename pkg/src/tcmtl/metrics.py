"""Evaluation metrics: inter-ocular-normalized landmark error, failure rate
at the 10% threshold, cumulative error curves and relative improvement.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

FAILURE_THRESHOLD = 0.10


def mean_error(pred, truth, eye_points=(0, 1)):
    """Per-point Euclidean error divided by the ground-truth inter-ocular
    distance, plus the mean over points.

    Coordinates are interleaved (x1, y1, x2, y2, ...). Returns
    (per_point (P,), mean).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.shape[0] % 2:
        raise DimensionError(f"coordinate vectors must match with even length, "
                             f"got {pred.shape} and {truth.shape}")
    pts_pred = pred.reshape(-1, 2)
    pts_truth = truth.reshape(-1, 2)
    i, j = eye_points
    interocular = float(np.linalg.norm(pts_truth[i] - pts_truth[j]))
    if interocular <= 0.0:
        raise NumericError("ground-truth eye points coincide; inter-ocular distance is zero")
    per_point = np.linalg.norm(pts_pred - pts_truth, axis=1) / interocular
    return per_point, float(per_point.mean())


def failure_rate(sample_errors):
    """Fraction of samples with mean error strictly above 10%."""
    errors = np.asarray(sample_errors, dtype=np.float64)
    if errors.size == 0:
        raise DimensionError("failure rate needs at least one sample")
    return float(np.mean(errors > FAILURE_THRESHOLD))


def cumulative_curve(sample_errors, thresholds):
    """Fraction of samples with error <= each threshold (ascending)."""
    errors = np.asarray(sample_errors, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise DimensionError("thresholds must be sorted ascending")
    return np.array([float(np.mean(errors <= t)) for t in thresholds])


def relative_improvement(err_base, err_variant):
    """(base - variant) / base; negative when the variant is worse."""
    if err_base <= 0.0:
        raise NumericError("relative improvement undefined for zero baseline error")
    return (err_base - err_variant) / err_base


@dataclass
class MetricsReport:
    per_point_mean: np.ndarray    # (P,) mean normalized error per landmark point
    overall_mean: float
    failure_rate: float
    curve_thresholds: np.ndarray
    curve_values: np.ndarray

    def rows(self):
        yield ["metric", "value"]
        for p, v in enumerate(self.per_point_mean):
            yield [f"point_{p}_mean_error", repr(float(v))]
        yield ["overall_mean_error", repr(float(self.overall_mean))]
        yield ["failure_rate", repr(float(self.failure_rate))]

    def curve_rows(self):
        yield ["threshold", "fraction"]
        for t, v in zip(self.curve_thresholds, self.curve_values):
            yield [repr(float(t)), repr(float(v))]


def evaluate(predictions, truths, eye_points=(0, 1), thresholds=None):
    """Full report over a batch: predictions and truths are (N, M) arrays."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or predictions.ndim != 2:
        raise DimensionError("predictions and truths must be matching (N, M) arrays")
    if thresholds is None:
        thresholds = np.linspace(0.0, 0.5, 51)
    per_point = []
    means = []
    for pred, truth in zip(predictions, truths):
        pp, m = mean_error(pred, truth, eye_points)
        per_point.append(pp)
        means.append(m)
    per_point = np.array(per_point)
    means = np.array(means)
    return MetricsReport(
        per_point_mean=per_point.mean(axis=0),
        overall_mean=float(means.mean()),
        failure_rate=failure_rate(means),
        curve_thresholds=np.asarray(thresholds, dtype=np.float64),
        curve_values=cumulative_curve(means, thresholds),
    )
