# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot kernels: strided valid 1D
cross-correlation (forward and both gradients) and weighted bin deposits.

Loops run sequentially in a fixed order so results are bit-reproducible.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "c"


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] kernels, int stride):
    cdef Py_ssize_t b = x.shape[0], i_ch = x.shape[1], l = x.shape[2]
    cdef Py_ssize_t o_ch = kernels.shape[0], width = kernels.shape[2]
    cdef Py_ssize_t l_out = (l - width) // stride + 1
    out = np.zeros((b, o_ch, l_out), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t bi, o, t, i, w, base
    cdef double acc
    for bi in range(b):
        for o in range(o_ch):
            for t in range(l_out):
                base = t * stride
                acc = 0.0
                for i in range(i_ch):
                    for w in range(width):
                        acc += x[bi, i, base + w] * kernels[o, i, w]
                y[bi, o, t] = acc
    return out


def conv1d_grad_input(double[:, :, ::1] gy, double[:, :, ::1] kernels, int stride,
                      Py_ssize_t in_len):
    cdef Py_ssize_t b = gy.shape[0], o_ch = gy.shape[1], l_out = gy.shape[2]
    cdef Py_ssize_t i_ch = kernels.shape[1], width = kernels.shape[2]
    out = np.zeros((b, i_ch, in_len), dtype=np.float64)
    cdef double[:, :, ::1] gx = out
    cdef Py_ssize_t bi, o, t, i, w, base
    cdef double g
    for bi in range(b):
        for o in range(o_ch):
            for t in range(l_out):
                g = gy[bi, o, t]
                base = t * stride
                for i in range(i_ch):
                    for w in range(width):
                        gx[bi, i, base + w] += g * kernels[o, i, w]
    return out


def conv1d_grad_kernels(double[:, :, ::1] x, double[:, :, ::1] gy, int stride,
                        Py_ssize_t width):
    cdef Py_ssize_t b = x.shape[0], i_ch = x.shape[1]
    cdef Py_ssize_t o_ch = gy.shape[1], l_out = gy.shape[2]
    out = np.zeros((o_ch, i_ch, width), dtype=np.float64)
    cdef double[:, :, ::1] gk = out
    cdef Py_ssize_t bi, o, t, i, w, base
    cdef double g
    for bi in range(b):
        for o in range(o_ch):
            for t in range(l_out):
                g = gy[bi, o, t]
                base = t * stride
                for i in range(i_ch):
                    for w in range(width):
                        gk[o, i, w] += g * x[bi, i, base + w]
    return out


def deposit_bins(cnp.int64_t[::1] indices, double[::1] weights, Py_ssize_t n_bins):
    out = np.zeros(n_bins, dtype=np.float64)
    cdef double[::1] acc = out
    cdef Py_ssize_t n = indices.shape[0], j
    for j in range(n):
        acc[indices[j]] += weights[j]
    return out
