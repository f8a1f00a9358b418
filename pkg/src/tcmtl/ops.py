"""Dense tensor kernels: valid cross-correlation, 2x2 max-pooling, rectified
linear activation and fully connected transforms, each with forward and
backward passes.

Everything is float64. Arrays are plain numpy ndarrays; the compiled or
numpy inner loops are chosen by tcmtl.backend at import.
"""
from dataclasses import dataclass

import numpy as np

from .backend import conv_kernels, pool_kernels
from .errors import DimensionError


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of one valid (no padding) convolution."""
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1

    def __post_init__(self):
        if self.kernel_size < 1:
            raise DimensionError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.stride < 1:
            raise DimensionError(f"stride must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DimensionError("channel counts must be >= 1")

    def out_dim(self, in_dim, axis="spatial"):
        """Output spatial size; the division must be exact (no padding)."""
        span = in_dim - self.kernel_size
        if span < 0:
            raise DimensionError(
                f"{axis} axis: input size {in_dim} smaller than kernel {self.kernel_size}")
        if span % self.stride != 0:
            raise DimensionError(
                f"{axis} axis: (in - kernel) = {span} not divisible by stride {self.stride}")
        return span // self.stride + 1


def _as_c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(inp, kernels, spec, bias=None):
    """Valid cross-correlation of inp[C,H,W] with kernels[F,C,k,k].

    Returns out[F,H',W'] with H' = (H-k)/stride + 1. bias, if given, is a
    length-F vector added per output map.
    """
    inp = _as_c64(inp)
    kernels = _as_c64(kernels)
    if inp.ndim != 3:
        raise DimensionError(f"input must be [C,H,W], got shape {inp.shape}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"kernels must be [F,C,k,k], got shape {kernels.shape}")
    if kernels.shape[1] != inp.shape[0]:
        raise DimensionError(
            f"channel axis: input has {inp.shape[0]} channels, kernels expect {kernels.shape[1]}")
    if (spec.in_channels, spec.out_channels, spec.kernel_size) != \
            (kernels.shape[1], kernels.shape[0], kernels.shape[2]):
        raise DimensionError(f"kernels shape {kernels.shape} disagrees with spec {spec}")
    ho = spec.out_dim(inp.shape[1], "height")
    wo = spec.out_dim(inp.shape[2], "width")
    out = np.empty((kernels.shape[0], ho, wo))
    macs = out.size * kernels.shape[1] * kernels.shape[2] ** 2
    conv_kernels(macs).conv2d_forward(inp, kernels, spec.stride, out)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (kernels.shape[0],):
            raise DimensionError(
                f"bias axis: expected length {kernels.shape[0]}, got shape {bias.shape}")
        out += bias[:, None, None]
    return out


def conv2d_backward(grad_out, inp, kernels, spec):
    """Gradients of a scalar loss through conv2d_forward.

    Returns (grad_input, grad_kernels, grad_bias) for the same shapes as the
    forward call.
    """
    grad_out = _as_c64(grad_out)
    inp = _as_c64(inp)
    kernels = _as_c64(kernels)
    ho = spec.out_dim(inp.shape[1], "height")
    wo = spec.out_dim(inp.shape[2], "width")
    if grad_out.shape != (kernels.shape[0], ho, wo):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({kernels.shape[0]}, {ho}, {wo})")
    grad_input = np.zeros_like(inp)
    grad_kernels = np.zeros_like(kernels)
    macs = grad_out.size * kernels.shape[1] * kernels.shape[2] ** 2
    mod = conv_kernels(macs)
    mod.conv2d_backward_kernels(grad_out, inp, kernels.shape[2], spec.stride, grad_kernels)
    mod.conv2d_backward_input(grad_out, kernels, spec.stride, grad_input)
    grad_bias = grad_out.sum(axis=(1, 2))
    return grad_input, grad_kernels, grad_bias


def maxpool2_forward(inp):
    """Disjoint 2x2 max-pool of inp[C,H,W]; H and W must be even.

    Returns (out[C,H/2,W/2], idx) where idx records the argmax positions for
    exact backward routing. Ties break to the first maximum in row-major
    window order.
    """
    inp = _as_c64(inp)
    if inp.ndim != 3:
        raise DimensionError(f"input must be [C,H,W], got shape {inp.shape}")
    c, h, w = inp.shape
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    out = np.empty((c, h // 2, w // 2))
    idx = np.empty((c, h // 2, w // 2), dtype=np.int64)
    pool_kernels().maxpool2_forward(inp, out, idx)
    return out, idx


def maxpool2_backward(grad_out, idx, in_shape):
    """Route grad_out[C,H/2,W/2] back to the recorded argmax positions."""
    grad_out = _as_c64(grad_out)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if grad_out.shape != idx.shape:
        raise DimensionError(f"grad_out {grad_out.shape} vs index record {idx.shape}")
    grad_input = np.zeros(in_shape)
    pool_kernels().maxpool2_backward(grad_out, idx, grad_input)
    return grad_input


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    """Mask the incoming gradient where the forward input was <= 0."""
    return np.asarray(grad_out, dtype=np.float64) * (np.asarray(x) > 0.0)


def fc_forward(x, weights, bias):
    """Affine map: weights[D_out,D_in] @ x + bias."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 1 or weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise DimensionError(
            f"fc input axis: weights {weights.shape} cannot act on x {x.shape}")
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"fc bias axis: expected {weights.shape[0]}, got {bias.shape}")
    return weights @ x + bias


def fc_backward(grad_out, x, weights):
    """Returns (grad_x, grad_weights, grad_bias)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if grad_out.shape != (weights.shape[0],):
        raise DimensionError(
            f"fc grad axis: expected {weights.shape[0]}, got shape {grad_out.shape}")
    return weights.T @ grad_out, np.outer(grad_out, x), grad_out.copy()
