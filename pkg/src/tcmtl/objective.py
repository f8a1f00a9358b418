"""Full training objective: least-squares landmark term, coefficient-weighted
attribute cross-entropy, task-covariance penalty tr(W U^-1 W^T) and filter
weight decay tr(K K^T).

Data terms are averaged over the batch (not summed) so the gradient step size
is batch-size invariant; the two penalties are added once per evaluation.
"""
from dataclasses import dataclass

import numpy as np

from . import heads
from .errors import NumericError
from .network import net_forward


@dataclass
class LossBreakdown:
    landmark_sq_loss: float
    attribute_ce_per_task: np.ndarray   # batch-averaged, unweighted
    attribute_ce_weighted: float
    covariance_penalty: float
    filter_decay: float
    total: float = None

    def __post_init__(self):
        parts = (self.landmark_sq_loss, self.attribute_ce_weighted,
                 self.covariance_penalty, self.filter_decay)
        names = ("landmark_sq_loss", "attribute_ce", "covariance_penalty", "filter_decay")
        for name, value in zip(names, parts):
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss term: {name} = {value}")
        if self.total is None:
            self.total = float(sum(parts))


def covariance_penalty(w, upsilon):
    """tr(W U^-1 W^T), computed via a solve rather than an explicit inverse.

    upsilon must be symmetric positive definite; a singular matrix raises
    NumericError.
    """
    w = np.asarray(w, dtype=np.float64)
    upsilon = np.asarray(upsilon, dtype=np.float64)
    try:
        solved = np.linalg.solve(upsilon, w.T)   # U^-1 W^T
    except np.linalg.LinAlgError as e:
        raise NumericError(f"task covariance is singular: {e}") from e
    return float(np.sum(w * solved.T))


def data_terms_from_outputs(predictions, probs, y_true, labels, mask, lambdas):
    """Batch-averaged landmark and attribute losses from head outputs.

    Returns (landmark_sq_loss, per-task CE vector averaged over the batch
    size, lambda-weighted CE total). Masked attribute entries contribute
    nothing.
    """
    b = predictions.shape[0]
    landmark = float(np.sum((y_true - predictions) ** 2)) / b
    if probs.shape[1]:
        ce = heads.binary_cross_entropy(probs, labels) * mask
        per_task = ce.sum(axis=0) / b
        weighted = float(per_task @ lambdas)
    else:
        per_task = np.zeros(0)
        weighted = 0.0
    return landmark, per_task, weighted


def compute_loss(samples, state, include_regularizers=True):
    """Evaluate the full objective over a batch of samples.

    state is a trainer.ModelState; per-task CE is reported both unweighted
    (vector) and weighted by the dynamic coefficients.
    """
    features = np.stack([
        net_forward(s.image, state.filters, state.net_config)[0] for s in samples])
    y_true = np.stack([s.landmarks for s in samples])
    if state.layout.n_attr:
        labels = np.stack([s.attributes for s in samples])
        mask = np.stack([s.attr_mask for s in samples])
    else:
        labels = np.zeros((len(samples), 0))
        mask = np.zeros((len(samples), 0))
    predictions, probs = heads.batch_head_outputs(features, state.weights)
    landmark, per_task, weighted = data_terms_from_outputs(
        predictions, probs, y_true, labels, mask, state.coefficients.lambdas)
    if include_regularizers:
        cov = covariance_penalty(state.weights.data, state.covariance.ridged())
        decay = state.filters.squared_norm()
    else:
        cov = 0.0
        decay = 0.0
    return LossBreakdown(landmark, per_task, weighted, cov, decay)
