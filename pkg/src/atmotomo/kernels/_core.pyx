# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels: bilinear gather and its transpose scatter."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def gather_add(double[::1] out, double[::1] src,
               cnp.int64_t[:, ::1] idx, double[:, ::1] w):
    """out[i] += sum_j src[idx[i, j]] * w[i, j]."""
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(n):
        out[i] += (src[idx[i, 0]] * w[i, 0] + src[idx[i, 1]] * w[i, 1]
                   + src[idx[i, 2]] * w[i, 2] + src[idx[i, 3]] * w[i, 3])


def scatter_add(double[::1] dst, double[::1] vals,
                cnp.int64_t[:, ::1] idx, double[:, ::1] w, double scale=1.0):
    """dst[idx[i, j]] += scale * vals[i] * w[i, j]."""
    cdef Py_ssize_t i, n = vals.shape[0]
    cdef double v
    for i in range(n):
        v = scale * vals[i]
        dst[idx[i, 0]] += v * w[i, 0]
        dst[idx[i, 1]] += v * w[i, 1]
        dst[idx[i, 2]] += v * w[i, 2]
        dst[idx[i, 3]] += v * w[i, 3]
