"""Three-step alternating optimization.

Each epoch runs plain SGD (with weight decay) on the filters and the task
weight matrix while the task covariance and the dynamic coefficients stay
fixed; the covariance is then refreshed in closed form on a schedule, and the
coefficients are refreshed from the error strips whenever a new strip sample
lands. Also: pre-train to fine-tune transfer and checkpoint persistence.
"""
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from . import coefficients as coeff
from . import covariance as cov
from . import heads, objective
from .backend import worker_cap
from .data import split
from .data import split_indices as data_split_indices
from .errors import ConfigError, FormatError, NumericError
from .heads import TaskLayout, WeightMatrix, init_weights
from .network import FilterBank, NetConfig, init_filters, net_backward, net_forward

MODES = ("joint", "fld_only", "fld_plus_group", "fld_plus_random", "baseline_early_stopping")


def parse_mode(mode):
    """'fld_plus_group:eyes' -> ('fld_plus_group', 'eyes'); plain modes pass
    through with a None group."""
    kind, _, group = mode.partition(":")
    if kind not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if kind == "fld_plus_group" and not group:
        raise ConfigError("fld_plus_group needs a group, e.g. fld_plus_group:eyes")
    if kind != "fld_plus_group" and group:
        raise ConfigError(f"mode {kind} takes no group argument")
    return kind, group or None


@dataclass(frozen=True)
class TrainConfig:
    eta1: float = 0.005
    eta2: float = 1e-5
    batch_size: int = 64
    epochs: int = 30
    cov_update_every: int = 1
    epsilon: float = 0.01            # coefficient floor
    rho: float = 1.0                 # mu scale
    tau: int = 5                     # strip lookback, in strip samples
    strip_sample_every: int = 100    # iterations between strip samples
    strip_smoothing: int = 1         # running-mean window for stored strip samples
    validation_fraction: float = 0.1
    seed: int = 0
    mode: str = "joint"
    dynamic_lambda: bool = True      # False freezes all coefficients at 1
    eta1_decay: float = 0.0          # step size eta1 / (1 + decay * iteration)
    weight_init: str = "fan_in"      # or "unit" for raw N(0,1) columns
    divergence_factor: float = 10.0
    early_stop_threshold: float = 0.0  # baseline_early_stopping halt criterion

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigError("step sizes must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch size must be >= 1 and epochs >= 0")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ConfigError("validation fraction must be in (0, 0.5]")
        if self.cov_update_every < 1 or self.strip_sample_every < 1 or self.tau < 1 \
                or self.strip_smoothing < 1:
            raise ConfigError("cadence knobs must be >= 1")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in (0, 1]")
        if self.weight_init not in ("fan_in", "unit"):
            raise ConfigError(f"weight_init must be fan_in or unit, got {self.weight_init!r}")
        parse_mode(self.mode)

    def to_text(self):
        keys = ("eta1", "eta2", "batch_size", "epochs", "cov_update_every", "epsilon",
                "rho", "tau", "strip_sample_every", "strip_smoothing",
                "validation_fraction", "seed",
                "mode", "dynamic_lambda", "eta1_decay", "weight_init",
                "divergence_factor", "early_stop_threshold")
        return "".join(f"{k}={getattr(self, k)!r}\n" for k in keys)


@dataclass
class ModelState:
    """Everything the model learns, plus the architecture it runs on."""
    net_config: NetConfig
    filters: FilterBank
    weights: WeightMatrix
    covariance: cov.TaskCovariance
    coefficients: coeff.CoefficientState
    layout: TaskLayout

    def __post_init__(self):
        d = self.net_config.feature_dim
        n_tasks = self.layout.n_tasks
        if self.weights.data.shape != (d, n_tasks):
            raise ConfigError(f"weight matrix {self.weights.data.shape} vs "
                              f"feature dim {d} and {n_tasks} tasks")
        if self.covariance.n_tasks != n_tasks:
            raise ConfigError("covariance size disagrees with the task count")
        if self.coefficients.n_tasks != self.layout.n_attr:
            raise ConfigError("coefficient count disagrees with the attribute count")

    def copy(self):
        return ModelState(self.net_config, self.filters.copy(), self.weights.copy(),
                          self.covariance.copy(), self.coefficients.copy(), self.layout)

    def forward(self, image):
        feature, _ = net_forward(image, self.filters, self.net_config)
        return feature

    def predict_landmarks(self, image):
        return heads.predict_landmarks(self.forward(image), self.weights)


@dataclass
class Checkpoint:
    state: ModelState
    iteration: int
    config_hash: str


@dataclass
class StepEvent:
    """Before/after values of one closed-form sub-problem, for monotonicity
    checks. For the covariance step the objective is tr(W U^-1 W^T); for the
    coefficient step it is the coefficient sub-problem summed over the tasks
    that were updated."""
    kind: str
    iteration: int
    before: float
    after: float


@dataclass
class TrainingLog:
    header: list
    rows: list = field(default_factory=list)
    step_events: list = field(default_factory=list)

    def to_csv(self):
        out = io.StringIO()
        out.write(",".join(self.header) + "\n")
        for row in self.rows:
            out.write(",".join(row) + "\n")
        return out.getvalue()

    def column(self, name, dtype=float):
        i = self.header.index(name)
        return np.array([dtype(row[i]) for row in self.rows if row[i] != ""])


def _fmt(x):
    return repr(float(x))


def config_hash(config, net_config):
    digest = hashlib.sha256()
    digest.update(config.to_text().encode())
    digest.update(net_config.to_text().encode())
    return digest.hexdigest()[:16]


# ---------------------------------------------------------------------------
# dataset plumbing

def _extract_arrays(dataset):
    images = [s.image for s in dataset]
    y = np.stack([s.landmarks for s in dataset])
    t = dataset.layout.n_attr
    if t:
        labels = np.stack([s.attributes for s in dataset])
        mask = np.stack([s.attr_mask for s in dataset])
    else:
        labels = np.zeros((len(images), 0))
        mask = np.zeros((len(images), 0))
    return images, y, labels, mask


def _apply_mode(layout, labels, mask, kind, group):
    """Restrict the attribute tasks according to the training mode."""
    if kind in ("joint", "baseline_early_stopping"):
        return layout, labels, mask
    if kind == "fld_only":
        empty = np.zeros((labels.shape[0], 0))
        return layout.subset([]), empty, empty.copy()
    if kind == "fld_plus_group":
        keep = layout.group_members(group)
        if not keep:
            raise ConfigError(f"attribute group {group!r} is empty or unknown")
        return layout.subset(keep), labels[:, keep], mask[:, keep]
    if kind == "fld_plus_random":
        random_layout = TaskLayout(layout.n_landmark, ("random_0",), ("random",),
                                   layout.eye_points)
        n = labels.shape[0]
        return random_layout, np.zeros((n, 1)), np.ones((n, 1))
    raise ConfigError(f"unhandled mode {kind}")


# ---------------------------------------------------------------------------
# forward/backward over a batch

def _forward_batch(images, state, keep_caches):
    workers = min(worker_cap(), len(images))

    def one(img):
        return net_forward(img, state.filters, state.net_config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, images))
    else:
        results = [one(img) for img in images]
    features = np.stack([r[0] for r in results])
    caches = [r[1] for r in results] if keep_caches else None
    return features, caches


def _backward_batch(caches, grad_x_rows, state):
    workers = min(worker_cap(), len(caches))

    def one(pair):
        cache, grad = pair
        return net_backward(cache, grad, state.filters, state.net_config)

    items = list(zip(caches, grad_x_rows))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grads = list(pool.map(one, items))
    else:
        grads = [one(p) for p in items]
    total = state.filters.zeros_like()
    for g in grads:   # fixed order: deterministic reduction
        total.add_scaled(g, 1.0)
    return total


def _apply_sgd_update(state, images, y, labels, mask, eta1, eta2, plain_w_decay):
    """One SGD step on W and the filters; returns batch stats for logging.

    Data gradients are batch means; the decay terms use eta2 with the
    covariance-weighted form 2 W U^-1 (or plain 2 W when plain_w_decay) for W
    and 2 K for the filters (biases carry no decay).
    """
    b = len(images)
    features, caches = _forward_batch(images, state, keep_caches=True)
    o, probs = heads.batch_head_outputs(features, state.weights)
    landmark_loss, per_task_ce_sum, label_count = _batch_losses(o, probs, y, labels, mask)

    if not np.isfinite(landmark_loss):
        raise NumericError("non-finite landmark loss in SGD step")
    gwm, gwt, grad_x = heads.batch_gradients_from_outputs(
        features, state.weights, o, probs, y, labels, mask, state.coefficients.lambdas)
    filter_grads = _backward_batch(caches, grad_x, state)

    w = state.weights.data
    m = state.weights.n_landmark
    w[:, :m] -= eta1 * gwm
    if state.layout.n_attr:
        w[:, m:] -= eta1 * gwt
    if plain_w_decay:
        w -= eta2 * 2.0 * w
    else:
        w -= eta2 * 2.0 * (w @ state.covariance.decay_inverse(eta2))
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite task weights after SGD step")

    inv_b = 1.0 / b
    for kernel, grad in zip(state.filters.kernels, filter_grads.kernels):
        kernel -= eta1 * inv_b * grad + eta2 * 2.0 * kernel
    for bias, grad in zip(state.filters.biases, filter_grads.biases):
        bias -= eta1 * inv_b * grad
    state.filters.fc_weight -= eta1 * inv_b * filter_grads.fc_weight \
        + eta2 * 2.0 * state.filters.fc_weight
    state.filters.fc_bias -= eta1 * inv_b * filter_grads.fc_bias
    return landmark_loss, per_task_ce_sum, label_count


def _batch_losses(o, probs, y, labels, mask):
    b = o.shape[0]
    landmark_loss = float(np.sum((y - o) ** 2)) / b
    if probs.shape[1]:
        ce = heads.binary_cross_entropy(probs, labels) * mask
        return landmark_loss, ce.sum(axis=0), mask.sum(axis=0)
    return landmark_loss, np.zeros(0), np.zeros(0)


def sgd_step(state, batch, config):
    """One gradient step on a batch of samples with the covariance and the
    coefficients held fixed. Returns a new state; the input is untouched."""
    if not batch:
        raise ConfigError("sgd_step needs a nonempty batch")
    new = state.copy()
    images = [s.image for s in batch]
    y = np.stack([s.landmarks for s in batch])
    if state.layout.n_attr:
        labels = np.stack([s.attributes for s in batch])
        mask = np.stack([s.attr_mask for s in batch])
    else:
        labels = np.zeros((len(batch), 0))
        mask = labels.copy()
    _apply_sgd_update(new, images, y, labels, mask, config.eta1, config.eta2,
                      plain_w_decay=False)
    return new


# ---------------------------------------------------------------------------
# the training loop

def _log_header(layout):
    header = ["iteration", "epoch", "eta1", "landmark_train_loss", "attr_ce_weighted",
              "cov_penalty", "filter_decay", "total_loss", "val_landmark_loss"]
    for name in layout.attr_names:
        header.append(f"lambda_{name}")
    for name in layout.attr_names:
        header.append(f"train_ce_{name}")
    for name in layout.attr_names:
        header.append(f"val_ce_{name}")
    return header


def _val_stats(state, val_images, val_y, val_labels, val_mask):
    features, _ = _forward_batch(val_images, state, keep_caches=False)
    o, probs = heads.batch_head_outputs(features, state.weights)
    landmark = float(np.sum((val_y - o) ** 2)) / len(val_images)
    if probs.shape[1]:
        ce = heads.binary_cross_entropy(probs, val_labels) * val_mask
        counts = val_mask.sum(axis=0)
        with np.errstate(invalid="ignore"):
            per_task = np.where(counts > 0, ce.sum(axis=0) / np.maximum(counts, 1), np.nan)
    else:
        per_task = np.zeros(0)
    return landmark, per_task


def train_validation_indices(n_samples, config):
    """The (train, validation) index split that train() will use for a
    dataset of n_samples under this config. Lets callers prepare per-split
    data (e.g. mask labels on training samples only)."""
    seeds = np.random.SeedSequence(config.seed).generate_state(5)
    return data_split_indices(n_samples, config.validation_fraction, int(seeds[0]))


def train(dataset, config, net_config=None, seed=None):
    """Run the full alternating optimization on a dataset.

    Returns (Checkpoint, TrainingLog). Identical (seed, config, data) give a
    bit-identical checkpoint and log.
    """
    if net_config is None:
        net_config = NetConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    kind, group = parse_mode(config.mode)
    seeds = np.random.SeedSequence(config.seed).generate_state(5)
    train_set, val_set = split(dataset, config.validation_fraction, int(seeds[0]))

    images, y, labels, mask = _extract_arrays(train_set)
    val_images, val_y, val_labels, val_mask = _extract_arrays(val_set)
    layout, labels, mask = _apply_mode(train_set.layout, labels, mask, kind, group)
    _, val_labels, val_mask = _apply_mode(val_set.layout, val_labels, val_mask, kind, group)

    if images and images[0].shape[1] != net_config.input_side:
        raise ConfigError(f"dataset images are {images[0].shape[1]} px, "
                          f"net config expects {net_config.input_side}")

    state = ModelState(
        net_config=net_config,
        filters=init_filters(net_config, int(seeds[1])),
        weights=init_weights(net_config.feature_dim, layout, int(seeds[2]), config.weight_init),
        covariance=cov.initial_covariance(layout.n_tasks),
        coefficients=coeff.initial_coefficients(layout.n_attr, config.epsilon, config.rho),
        layout=layout,
    )
    random_rng_seed = int(seeds[3])

    log = TrainingLog(_log_header(layout))
    strip = coeff.ErrorStrip(layout.n_attr, config.tau,
                             config.strip_smoothing) if layout.n_attr else None
    window_ce = np.zeros(layout.n_attr)
    window_count = np.zeros(layout.n_attr)
    latest_val_landmark = ""
    latest_val_ce = [""] * layout.n_attr
    latest_train_ce = [""] * layout.n_attr
    halted = np.zeros(layout.n_attr, dtype=bool)
    initial_loss = None
    iteration = 0

    for epoch in range(config.epochs):
        if kind == "fld_plus_random":
            epoch_rng = np.random.default_rng((random_rng_seed, epoch))
            labels = epoch_rng.integers(0, 2, size=(len(images), 1)).astype(np.float64)
            val_labels = epoch_rng.integers(0, 2, size=(len(val_images), 1)).astype(np.float64)
        order = np.random.default_rng((int(seeds[4]), epoch)).permutation(len(images))
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            iteration += 1
            eta1 = config.eta1 / (1.0 + config.eta1_decay * iteration)
            landmark_loss, ce_sum, ce_count = _apply_sgd_update(
                state, [images[i] for i in batch_idx], y[batch_idx],
                labels[batch_idx], mask[batch_idx], eta1, config.eta2,
                plain_w_decay=False)
            window_ce += ce_sum
            window_count += ce_count

            if initial_loss is None:
                initial_loss = landmark_loss
            elif initial_loss > 0 and landmark_loss > config.divergence_factor * initial_loss:
                raise NumericError(
                    f"divergence: landmark loss {landmark_loss:.4g} exceeds "
                    f"{config.divergence_factor} x initial {initial_loss:.4g} "
                    f"at iteration {iteration}")

            if iteration % config.strip_sample_every == 0:
                val_landmark, val_ce = _val_stats(state, val_images, val_y,
                                                  val_labels, val_mask)
                latest_val_landmark = _fmt(val_landmark)
                if strip is not None:
                    with np.errstate(invalid="ignore"):
                        train_ce = np.where(window_count > 0,
                                            window_ce / np.maximum(window_count, 1), np.nan)
                    coeff.record_losses(strip, iteration, train_ce, val_ce)
                    latest_val_ce = ["" if np.isnan(v) else _fmt(v) for v in val_ce]
                    latest_train_ce = ["" if np.isnan(v) else _fmt(v) for v in train_ce]
                    window_ce[:] = 0.0
                    window_count[:] = 0.0
                    _coefficient_step(state, strip, config, kind, halted, train_ce,
                                      iteration, log)

            # per-iteration log row (validation columns carry the latest value)
            ce_weighted = float(np.nansum(np.where(
                ce_count > 0, (ce_sum / np.maximum(ce_count, 1)) * state.coefficients.lambdas,
                0.0))) if layout.n_attr else 0.0
            cov_pen = objective.covariance_penalty(state.weights.data, state.covariance.ridged())
            decay = state.filters.squared_norm()
            total = landmark_loss + ce_weighted + cov_pen + decay
            row = [str(iteration), str(epoch), _fmt(eta1), _fmt(landmark_loss),
                   _fmt(ce_weighted), _fmt(cov_pen), _fmt(decay), _fmt(total),
                   latest_val_landmark]
            row += [_fmt(v) for v in state.coefficients.lambdas]
            row += latest_train_ce
            row += latest_val_ce
            log.rows.append(row)

        if (epoch + 1) % config.cov_update_every == 0:
            _covariance_step(state, iteration, log)

    return Checkpoint(state, iteration, config_hash(config, net_config)), log


def _covariance_step(state, iteration, log):
    before = objective.covariance_penalty(state.weights.data, state.covariance.ridged())
    state.covariance = cov.update_covariance(state.weights.data)
    after = objective.covariance_penalty(state.weights.data, state.covariance.ridged())
    log.step_events.append(StepEvent("covariance", iteration, before, after))


def _coefficient_step(state, strip, config, kind, halted, train_ce, iteration, log):
    if not config.dynamic_lambda:
        return
    mus = np.full(state.layout.n_attr, np.nan)
    for t in range(state.layout.n_attr):
        mu = coeff.compute_mu(strip, t, config.rho, config.tau)
        if mu is not None:
            mus[t] = mu
    if kind == "baseline_early_stopping":
        # one-way halt: a task whose validation trend product falls below the
        # threshold is pinned at the floor for the rest of the run
        newly = ~np.isnan(mus) & (mus < config.early_stop_threshold)
        halted |= newly
        state.coefficients.lambdas[halted] = config.epsilon
        return
    state.coefficients = replace(state.coefficients, mu=mus)
    live = ~np.isnan(mus) & ~np.isnan(train_ce)
    if not live.any():
        return
    before_state = state.coefficients
    after_state = coeff.update_lambda(before_state, train_ce)
    obj_before = sum(coeff.lambda_objective(before_state.lambdas[t], train_ce[t], mus[t])
                     for t in np.flatnonzero(live))
    obj_after = sum(coeff.lambda_objective(after_state.lambdas[t], train_ce[t], mus[t])
                    for t in np.flatnonzero(live))
    state.coefficients = after_state
    log.step_events.append(StepEvent("coefficients", iteration, obj_before, obj_after))


# ---------------------------------------------------------------------------
# transfer

def fine_tune(checkpoint_in, dense_dataset, config, seed=None):
    """Landmark-only training on a denser configuration, starting from the
    shared representation of a pre-trained checkpoint.

    The task weight matrix is rebuilt for the new landmark count; attribute
    heads, covariance and coefficients are dropped. Returns
    (Checkpoint, TrainingLog).
    """
    if seed is not None:
        config = replace(config, seed=seed)
    net_config = checkpoint_in.state.net_config
    if len(dense_dataset) == 0:
        raise ConfigError("fine-tune dataset is empty")
    side = dense_dataset[0].image.shape[1]
    if side != net_config.input_side:
        raise ConfigError(f"dense dataset images are {side} px, "
                          f"checkpoint expects {net_config.input_side}")

    seeds = np.random.SeedSequence(config.seed).generate_state(5)
    train_set, val_set = split(dense_dataset, config.validation_fraction, int(seeds[0]))
    layout = TaskLayout(dense_dataset.layout.n_landmark, (), (),
                        dense_dataset.layout.eye_points)
    state = ModelState(
        net_config=net_config,
        filters=checkpoint_in.state.filters.copy(),
        weights=init_weights(net_config.feature_dim, layout, int(seeds[2]), config.weight_init),
        covariance=cov.initial_covariance(layout.n_tasks),
        coefficients=coeff.initial_coefficients(0, config.epsilon, config.rho),
        layout=layout,
    )
    images, y, labels, mask = _extract_arrays(train_set)
    log = TrainingLog(_log_header(layout))
    initial_loss = None
    iteration = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng((int(seeds[4]), epoch)).permutation(len(images))
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            iteration += 1
            eta1 = config.eta1 / (1.0 + config.eta1_decay * iteration)
            landmark_loss, _, _ = _apply_sgd_update(
                state, [images[i] for i in batch_idx], y[batch_idx],
                labels[batch_idx], mask[batch_idx], eta1, config.eta2,
                plain_w_decay=True)
            if initial_loss is None:
                initial_loss = landmark_loss
            elif initial_loss > 0 and landmark_loss > config.divergence_factor * initial_loss:
                raise NumericError(f"divergence at fine-tune iteration {iteration}")
            decay = state.filters.squared_norm()
            row = [str(iteration), str(epoch), _fmt(eta1), _fmt(landmark_loss),
                   _fmt(0.0), _fmt(0.0), _fmt(decay), _fmt(landmark_loss + decay), ""]
            log.rows.append(row)
    return Checkpoint(state, iteration, config_hash(config, net_config)), log


# ---------------------------------------------------------------------------
# persistence

def save_checkpoint(path, checkpoint_obj):
    state = checkpoint_obj.state
    layout = state.layout
    sections = [
        ("meta", ckpt.text_payload({
            "iteration": checkpoint_obj.iteration,
            "config_hash": checkpoint_obj.config_hash,
            "coeff_floor": repr(state.coefficients.floor),
            "coeff_scale": repr(state.coefficients.scale),
        })),
        ("netconfig", state.net_config.to_text().encode("utf-8")),
        ("layout", ckpt.text_payload({
            "m": layout.n_landmark,
            "eyes": f"{layout.eye_points[0]};{layout.eye_points[1]}",
            "attrs": ";".join(f"{n}:{g}" for n, g in zip(layout.attr_names, layout.attr_groups)),
        })),
        ("weights", ckpt.pack_array(state.weights.data)),
        ("upsilon", ckpt.pack_array(state.covariance.upsilon)),
        ("lambdas", ckpt.pack_array(state.coefficients.lambdas)),
        ("mu", ckpt.pack_array(state.coefficients.mu)),
        ("fc_weight", ckpt.pack_array(state.filters.fc_weight)),
        ("fc_bias", ckpt.pack_array(state.filters.fc_bias)),
    ]
    for i, (kernel, bias) in enumerate(zip(state.filters.kernels, state.filters.biases)):
        sections.append((f"kernel_{i}", ckpt.pack_array(kernel)))
        sections.append((f"bias_{i}", ckpt.pack_array(bias)))
    ckpt.write_atomic(path, ckpt.pack_sections(sections))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e
    sections = dict(ckpt.unpack_sections(data))
    required = {"meta", "netconfig", "layout", "weights", "upsilon", "lambdas",
                "mu", "fc_weight", "fc_bias"}
    missing = required - set(sections)
    if missing:
        raise FormatError(f"checkpoint missing sections {sorted(missing)}")
    meta = ckpt.parse_text_payload(sections["meta"])
    net_config = NetConfig.from_text(sections["netconfig"].decode("utf-8"))
    layout_fields = ckpt.parse_text_payload(sections["layout"])
    names, groups = [], []
    if layout_fields.get("attrs"):
        for tok in layout_fields["attrs"].split(";"):
            name, _, grp = tok.partition(":")
            names.append(name)
            groups.append(grp)
    eyes = tuple(int(v) for v in layout_fields["eyes"].split(";"))
    layout = TaskLayout(int(layout_fields["m"]), tuple(names), tuple(groups), eyes)

    bank = FilterBank()
    i = 0
    while f"kernel_{i}" in sections:
        bank.kernels.append(ckpt.unpack_array(sections[f"kernel_{i}"]))
        bank.biases.append(ckpt.unpack_array(sections[f"bias_{i}"]))
        i += 1
    bank.fc_weight = ckpt.unpack_array(sections["fc_weight"])
    bank.fc_bias = ckpt.unpack_array(sections["fc_bias"])
    state = ModelState(
        net_config=net_config,
        filters=bank,
        weights=WeightMatrix(ckpt.unpack_array(sections["weights"]), layout.n_landmark),
        covariance=cov.TaskCovariance(ckpt.unpack_array(sections["upsilon"])),
        coefficients=coeff.CoefficientState(
            ckpt.unpack_array(sections["lambdas"]), ckpt.unpack_array(sections["mu"]),
            float(meta["coeff_floor"]), float(meta["coeff_scale"])),
        layout=layout,
    )
    return Checkpoint(state, int(meta["iteration"]), meta["config_hash"])
