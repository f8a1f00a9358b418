"""Per-task dynamic coefficients.

Each auxiliary task carries a coefficient lambda_t in [floor, 1], updated in
closed form from (a) mu_t, the product of the task's relative validation and
training error drops over a strip of recent samples, scaled by rho, and
(b) the task's mean training cross-entropy over the latest strip window:

    lambda_t = clamp(mu_t - meanCE_t, floor, 1)

The subtracted meanCE_t is the negated mean log-likelihood appearing in the
coefficient sub-problem; the closed form is the box-constrained minimizer of

    lambda * meanCE_t + 0.5 * (lambda - mu_t)^2.

Until a task has enough strip history (or a strip endpoint is zero), it is in
warmup: mu_t is undefined and lambda_t holds its previous value (all ones at
the start of training).
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class CoefficientState:
    """Dynamic coefficients, their targets and the clamp bounds."""
    lambdas: np.ndarray
    mu: np.ndarray          # nan marks warmup
    floor: float = 0.01
    scale: float = 1.0      # rho

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.floor <= 0.0 or self.floor > 1.0:
            raise ConfigError(f"coefficient floor must be in (0, 1], got {self.floor}")
        if self.lambdas.shape != self.mu.shape:
            raise ConfigError("lambda and mu vectors must align")
        live = self.lambdas
        if live.size and (live.min() < self.floor - 1e-12 or live.max() > 1.0 + 1e-12):
            raise ConfigError("coefficients out of [floor, 1]")

    @property
    def n_tasks(self):
        return self.lambdas.shape[0]

    def copy(self):
        return CoefficientState(self.lambdas.copy(), self.mu.copy(), self.floor, self.scale)


def initial_coefficients(n_tasks, floor=0.01, scale=1.0):
    """All tasks start at full weight (warmup)."""
    return CoefficientState(np.ones(n_tasks), np.full(n_tasks, np.nan), floor, scale)


class ErrorStrip:
    """Per-task ring buffers of training and validation losses, sampled every
    few iterations. Capacity is 2 * tau samples.

    smoothing > 1 stores each sample as the running mean of the last that
    many raw samples, damping estimate noise in the stored series while
    systematic trends pass through (off by default; the trend formula then
    sees the raw endpoints exactly).
    """

    def __init__(self, n_tasks, tau, smoothing=1):
        if tau < 1:
            raise ConfigError(f"strip length tau must be >= 1, got {tau}")
        if smoothing < 1:
            raise ConfigError(f"smoothing window must be >= 1, got {smoothing}")
        self.n_tasks = n_tasks
        self.tau = tau
        self.smoothing = smoothing
        self.capacity = 2 * tau
        self.iterations = []
        self.train = []   # each entry: ndarray (n_tasks,)
        self.val = []
        self._raw_train = []
        self._raw_val = []

    def __len__(self):
        return len(self.iterations)

    def _smoothed(self, raw):
        window = raw[-self.smoothing:]
        return np.nanmean(np.stack(window), axis=0) if len(window) > 1 else window[-1]

    def record(self, iteration, train_losses, val_losses):
        """Append one sample; evicts the oldest beyond capacity."""
        train_losses = np.asarray(train_losses, dtype=np.float64)
        val_losses = np.asarray(val_losses, dtype=np.float64)
        if train_losses.shape != (self.n_tasks,) or val_losses.shape != (self.n_tasks,):
            raise ConfigError("per-task loss vectors must have length n_tasks")
        if self.iterations and iteration <= self.iterations[-1]:
            raise ConfigError("strip samples must arrive in increasing iteration order")
        self._raw_train.append(train_losses.copy())
        self._raw_val.append(val_losses.copy())
        while len(self._raw_train) > max(self.capacity, self.smoothing):
            self._raw_train.pop(0)
            self._raw_val.pop(0)
        self.iterations.append(iteration)
        with np.errstate(invalid="ignore"):
            self.train.append(self._smoothed(self._raw_train))
            self.val.append(self._smoothed(self._raw_val))
        while len(self.iterations) > self.capacity:
            self.iterations.pop(0)
            self.train.pop(0)
            self.val.pop(0)


def record_losses(strip, iteration, train_losses, val_losses):
    strip.record(iteration, train_losses, val_losses)


def compute_mu(strip, task, rho, tau):
    """rho * (relative validation drop) * (relative training drop) over the
    last tau strip samples, or None while the task is still in warmup
    (insufficient history, undefined losses, or a zero denominator)."""
    if tau > strip.tau:
        raise ConfigError(f"lookback {tau} exceeds strip length {strip.tau}")
    if len(strip) < tau + 1:
        return None
    val_new, val_old = strip.val[-1][task], strip.val[-1 - tau][task]
    tr_new, tr_old = strip.train[-1][task], strip.train[-1 - tau][task]
    if not np.isfinite([val_new, val_old, tr_new, tr_old]).all():
        return None
    if val_old <= 0.0 or tr_old <= 0.0:
        return None
    return float(rho * ((val_old - val_new) / val_old) * ((tr_old - tr_new) / tr_old))


def update_lambda(state, mean_ce):
    """Closed-form coefficient update, one task at a time.

    mean_ce holds each task's mean training cross-entropy over the latest
    strip window (nan where the window had no labeled samples). Warmup tasks
    (mu nan) keep their previous coefficient. Returns a new state; the input
    is untouched so readers always see a consistent snapshot.
    """
    mean_ce = np.asarray(mean_ce, dtype=np.float64)
    if mean_ce.shape != (state.n_tasks,):
        raise ConfigError("mean_ce must have one entry per task")
    new = state.copy()
    for t in range(state.n_tasks):
        if np.isnan(state.mu[t]) or np.isnan(mean_ce[t]):
            continue
        new.lambdas[t] = min(1.0, max(state.floor, state.mu[t] - mean_ce[t]))
    return new


def lambda_objective(lam, mean_ce_t, mu_t):
    """Per-task coefficient sub-problem value at lambda."""
    return lam * mean_ce_t + 0.5 * (lam - mu_t) ** 2
