"""Shared convolutional representation: a configurable stack of conv/pool/relu
layers ending in one fully connected layer that produces the feature vector
consumed by every task head.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError

_INIT_MODES = ("fan_in", "unit")


@dataclass(frozen=True)
class LayerSpec:
    """One convolutional stage: kernel size, output maps, stride, pool flag."""
    kernel: int
    maps: int
    stride: int = 1
    pool: bool = False


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the shared representation.

    init_mode controls filter initialization: "fan_in" scales standard normal
    draws by 1/sqrt(fan_in); "unit" keeps the raw N(0,1) draws.
    """
    input_side: int = 60
    layers: tuple = (
        LayerSpec(kernel=5, maps=20, stride=1, pool=True),
        LayerSpec(kernel=3, maps=48, stride=1, pool=True),
        LayerSpec(kernel=3, maps=64, stride=1, pool=False),
        LayerSpec(kernel=2, maps=80, stride=1, pool=True),
    )
    feature_dim: int = 100
    init_mode: str = "fan_in"

    def __post_init__(self):
        if self.init_mode not in _INIT_MODES:
            raise ConfigError(f"init_mode must be one of {_INIT_MODES}, got {self.init_mode!r}")
        if self.input_side < 1 or self.feature_dim < 1 or not self.layers:
            raise ConfigError("input_side, feature_dim and layer list must be positive")
        self.spatial_chain()  # validates the whole pipeline

    def conv_specs(self):
        specs = []
        in_ch = 1
        for layer in self.layers:
            specs.append(ops.ConvSpec(in_ch, layer.maps, layer.kernel, layer.stride))
            in_ch = layer.maps
        return specs

    def spatial_chain(self):
        """Per-stage spatial sizes: [input, after conv1(, after pool1), ...]."""
        side = self.input_side
        chain = [side]
        for i, (layer, spec) in enumerate(zip(self.layers, self.conv_specs())):
            try:
                side = spec.out_dim(side)
            except DimensionError as e:
                raise ConfigError(f"layer {i}: {e}") from e
            chain.append(side)
            if layer.pool:
                if side % 2:
                    raise ConfigError(f"layer {i}: pooling needs an even size, got {side}")
                side //= 2
                chain.append(side)
        if side < 1:
            raise ConfigError("spatial size collapsed to zero before the fc layer")
        return chain

    def flat_dim(self):
        return self.layers[-1].maps * self.spatial_chain()[-1] ** 2

    def to_text(self):
        """Canonical key=value form used by config files and checkpoints."""
        parts = []
        for layer in self.layers:
            parts.append(f"{layer.kernel}x{layer.maps}s{layer.stride}" + ("p" if layer.pool else ""))
        return (f"feature_dim={self.feature_dim}\n"
                f"init_mode={self.init_mode}\n"
                f"input_side={self.input_side}\n"
                f"layers={','.join(parts)}\n")

    @staticmethod
    def from_text(text):
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad net config line: {line!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
        unknown = set(fields) - {"feature_dim", "init_mode", "input_side", "layers"}
        if unknown:
            raise ConfigError(f"unknown net config keys: {sorted(unknown)}")
        try:
            layers = tuple(parse_layer_spec(tok) for tok in fields["layers"].split(",") if tok)
            return NetConfig(
                input_side=int(fields.get("input_side", 60)),
                layers=layers,
                feature_dim=int(fields["feature_dim"]),
                init_mode=fields.get("init_mode", "fan_in"),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad net config: {e}") from e


def parse_layer_spec(token):
    """Parse '5x20s2p' -> LayerSpec(kernel=5, maps=20, stride=2, pool=True)."""
    tok = token.strip().lower()
    pool = tok.endswith("p")
    if pool:
        tok = tok[:-1]
    stride = 1
    if "s" in tok:
        tok, s = tok.split("s", 1)
        stride = int(s)
    kernel, maps = tok.split("x", 1)
    return LayerSpec(kernel=int(kernel), maps=int(maps), stride=stride, pool=pool)


@dataclass
class FilterBank:
    """All learned parameters of the shared representation."""
    kernels: list = field(default_factory=list)   # per layer: (F, C, k, k)
    biases: list = field(default_factory=list)    # per layer: (F,)
    fc_weight: np.ndarray = None                  # (D, flat)
    fc_bias: np.ndarray = None                    # (D,)

    def copy(self):
        return FilterBank([k.copy() for k in self.kernels],
                          [b.copy() for b in self.biases],
                          self.fc_weight.copy(), self.fc_bias.copy())

    def zeros_like(self):
        return FilterBank([np.zeros_like(k) for k in self.kernels],
                          [np.zeros_like(b) for b in self.biases],
                          np.zeros_like(self.fc_weight), np.zeros_like(self.fc_bias))

    def add_scaled(self, other, factor):
        """In-place self += factor * other, field by field."""
        for k, ok in zip(self.kernels, other.kernels):
            k += factor * ok
        for b, ob in zip(self.biases, other.biases):
            b += factor * ob
        self.fc_weight += factor * other.fc_weight
        self.fc_bias += factor * other.fc_bias

    def squared_norm(self):
        """Sum of squares over kernels and fc weight (biases excluded)."""
        total = sum(float(np.sum(k * k)) for k in self.kernels)
        return total + float(np.sum(self.fc_weight ** 2))

    def check_finite(self):
        for i, k in enumerate(self.kernels):
            if not np.all(np.isfinite(k)):
                raise ValueError(f"non-finite kernel in layer {i}")
        if not (np.all(np.isfinite(self.fc_weight)) and np.all(np.isfinite(self.fc_bias))):
            raise ValueError("non-finite fc parameters")


def init_filters(config, seed):
    """Fresh FilterBank: standard normal kernels (scaled per config.init_mode),
    zero biases, reproducible per seed."""
    rng = np.random.default_rng(seed)
    bank = FilterBank()
    in_ch = 1
    for layer in config.layers:
        fan_in = in_ch * layer.kernel ** 2
        scale = 1.0 if config.init_mode == "unit" else 1.0 / np.sqrt(fan_in)
        bank.kernels.append(scale * rng.standard_normal((layer.maps, in_ch, layer.kernel, layer.kernel)))
        bank.biases.append(np.zeros(layer.maps))
        in_ch = layer.maps
    flat = config.flat_dim()
    scale = 1.0 if config.init_mode == "unit" else 1.0 / np.sqrt(flat)
    bank.fc_weight = scale * rng.standard_normal((config.feature_dim, flat))
    bank.fc_bias = np.zeros(config.feature_dim)
    return bank


def net_forward(image, bank, config):
    """Run the stack on one image [1, side, side].

    Returns (feature, cache); the cache holds every intermediate needed by
    net_backward and is owned by the caller.
    """
    image = np.asarray(image, dtype=np.float64)
    expected = (1, config.input_side, config.input_side)
    if image.shape != expected:
        raise DimensionError(f"image shape {image.shape}, config expects {expected}")
    x = image
    stages = []
    for layer, spec, kernel, bias in zip(config.layers, config.conv_specs(),
                                         bank.kernels, bank.biases):
        pre = ops.conv2d_forward(x, kernel, spec, bias)
        act = ops.relu_forward(pre)
        if layer.pool:
            pooled, idx = ops.maxpool2_forward(act)
        else:
            pooled, idx = act, None
        stages.append({"input": x, "pre": pre, "act_shape": act.shape, "pool_idx": idx})
        x = pooled
    flat = x.reshape(-1)
    feature = ops.fc_forward(flat, bank.fc_weight, bank.fc_bias)
    cache = {"stages": stages, "flat": flat, "last_shape": x.shape}
    return feature, cache


def net_backward(cache, grad_feature, bank, config):
    """Gradients of a scalar loss w.r.t. every kernel, bias and fc parameter.

    cache must come from a matching net_forward call with the same bank.
    """
    grad_feature = np.asarray(grad_feature, dtype=np.float64)
    grads = bank.zeros_like()
    grad_flat, grads.fc_weight, grads.fc_bias = ops.fc_backward(
        grad_feature, cache["flat"], bank.fc_weight)
    g = grad_flat.reshape(cache["last_shape"])
    specs = config.conv_specs()
    for i in range(len(config.layers) - 1, -1, -1):
        layer = config.layers[i]
        spec = specs[i]
        stage = cache["stages"][i]
        if layer.pool:
            g = ops.maxpool2_backward(g, stage["pool_idx"], stage["act_shape"])
        g = ops.relu_backward(g, stage["pre"])
        g, grads.kernels[i], grads.biases[i] = ops.conv2d_backward(
            g, stage["input"], bank.kernels[i], spec)
    return grads


def with_feature_dim(config, feature_dim):
    """Same architecture with a different feature dimension."""
    return replace(config, feature_dim=feature_dim)
