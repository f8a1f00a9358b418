# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for valid cross-correlation and 2x2 max-pooling.

Semantics (including the first-index-in-row-major tie rule for pooling)
must stay identical to tcmtl.kernels_py, which is the fallback backend.
All buffers are C-contiguous float64; index records are int64.
"""


def conv2d_forward(double[:, :, ::1] inp, double[:, :, :, ::1] kernels,
                   int stride, double[:, :, ::1] out):
    """out[f,i,j] = sum_{c,p,q} inp[c, i*s+p, j*s+q] * kernels[f,c,p,q]."""
    cdef Py_ssize_t F = kernels.shape[0], C = kernels.shape[1], K = kernels.shape[2]
    cdef Py_ssize_t Ho = out.shape[1], Wo = out.shape[2]
    cdef Py_ssize_t f, c, i, j, p, q
    cdef double acc
    with nogil:
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for p in range(K):
                            for q in range(K):
                                acc += inp[c, i * stride + p, j * stride + q] * kernels[f, c, p, q]
                    out[f, i, j] = acc


def conv2d_backward_kernels(double[:, :, ::1] gout, double[:, :, ::1] inp,
                            int kernel_size, int stride, double[:, :, :, ::1] gker):
    """gker[f,c,p,q] = sum_{i,j} gout[f,i,j] * inp[c, i*s+p, j*s+q]."""
    cdef Py_ssize_t F = gout.shape[0], Ho = gout.shape[1], Wo = gout.shape[2]
    cdef Py_ssize_t C = inp.shape[0], K = kernel_size
    cdef Py_ssize_t f, c, i, j, p, q
    cdef double g
    with nogil:
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    g = gout[f, i, j]
                    if g == 0.0:
                        continue
                    for c in range(C):
                        for p in range(K):
                            for q in range(K):
                                gker[f, c, p, q] += g * inp[c, i * stride + p, j * stride + q]


def conv2d_backward_input(double[:, :, ::1] gout, double[:, :, :, ::1] kernels,
                          int stride, double[:, :, ::1] ginp):
    """Scatter gout back through the kernels onto the (zeroed) input gradient."""
    cdef Py_ssize_t F = kernels.shape[0], C = kernels.shape[1], K = kernels.shape[2]
    cdef Py_ssize_t Ho = gout.shape[1], Wo = gout.shape[2]
    cdef Py_ssize_t f, c, i, j, p, q
    cdef double g
    with nogil:
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    g = gout[f, i, j]
                    if g == 0.0:
                        continue
                    for c in range(C):
                        for p in range(K):
                            for q in range(K):
                                ginp[c, i * stride + p, j * stride + q] += g * kernels[f, c, p, q]


def maxpool2_forward(double[:, :, ::1] inp, double[:, :, ::1] out,
                     long long[:, :, ::1] idx):
    """Disjoint 2x2 max-pool; idx records the winning flat spatial index (h*W+w).

    Ties go to the first maximum in row-major window order so the backward
    routing is deterministic.
    """
    cdef Py_ssize_t C = inp.shape[0], H = inp.shape[1], W = inp.shape[2]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    cdef Py_ssize_t c, i, j, h0, w0
    cdef double best, v
    cdef Py_ssize_t bh, bw
    with nogil:
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    h0 = 2 * i
                    w0 = 2 * j
                    best = inp[c, h0, w0]
                    bh = h0
                    bw = w0
                    v = inp[c, h0, w0 + 1]
                    if v > best:
                        best = v; bh = h0; bw = w0 + 1
                    v = inp[c, h0 + 1, w0]
                    if v > best:
                        best = v; bh = h0 + 1; bw = w0
                    v = inp[c, h0 + 1, w0 + 1]
                    if v > best:
                        best = v; bh = h0 + 1; bw = w0 + 1
                    out[c, i, j] = best
                    idx[c, i, j] = bh * W + bw


def maxpool2_backward(double[:, :, ::1] gout, long long[:, :, ::1] idx,
                      double[:, :, ::1] ginp):
    """Deposit each output gradient at its recorded argmax position."""
    cdef Py_ssize_t C = gout.shape[0], Ho = gout.shape[1], Wo = gout.shape[2]
    cdef Py_ssize_t W = ginp.shape[2]
    cdef Py_ssize_t c, i, j
    cdef long long flat
    with nogil:
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    flat = idx[c, i, j]
                    ginp[c, flat // W, flat % W] += gout[c, i, j]
