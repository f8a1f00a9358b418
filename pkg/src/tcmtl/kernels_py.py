"""Pure-numpy implementations of the hot kernels.

Fallback backend used when the compiled extension tcmtl._kernels_c is not
built. Function signatures and semantics (including the max-pool tie rule)
mirror the extension exactly; both write into caller-provided output buffers.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(inp, kernel_size, stride):
    win = sliding_window_view(inp, (kernel_size, kernel_size), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_forward(inp, kernels, stride, out):
    win = _windows(inp, kernels.shape[2], stride)
    out[...] = np.tensordot(kernels, win, axes=([1, 2, 3], [0, 3, 4]))


def conv2d_backward_kernels(gout, inp, kernel_size, stride, gker):
    win = _windows(inp, kernel_size, stride)
    gker += np.tensordot(gout, win, axes=([1, 2], [1, 2]))


def conv2d_backward_input(gout, kernels, stride, ginp):
    ho, wo = gout.shape[1], gout.shape[2]
    k = kernels.shape[2]
    for p in range(k):
        for q in range(k):
            patch = np.tensordot(kernels[:, :, p, q], gout, axes=([0], [0]))
            ginp[:, p:p + ho * stride:stride, q:q + wo * stride:stride] += patch


def maxpool2_forward(inp, out, idx):
    c, h, w = inp.shape
    ho, wo = h // 2, w // 2
    # window layout (c, ho, wo, 4) in row-major window order; np.argmax keeps
    # the first maximum, matching the compiled tie rule
    win = inp.reshape(c, ho, 2, wo, 2).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, 4)
    flat = np.argmax(win, axis=3)
    out[...] = np.take_along_axis(win, flat[..., None], axis=3)[..., 0]
    idx[...] = (2 * np.arange(ho)[None, :, None] + flat // 2) * w + \
               (2 * np.arange(wo)[None, None, :] + flat % 2)


def maxpool2_backward(gout, idx, ginp):
    c = gout.shape[0]
    flat = ginp.reshape(c, -1)
    # windows are disjoint, so indices are unique per channel and a fancy
    # indexed add is safe
    flat[np.arange(c)[:, None, None], idx] += gout
