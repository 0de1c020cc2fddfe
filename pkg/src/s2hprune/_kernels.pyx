# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im loops for the conv primitive.

Accumulation order in ``col2im`` matches the numpy fallback exactly (kernel
offsets in row-major order), so both paths produce identical bits.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    out = np.empty((B, C * kh * kw, Ho * Wo), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, oh, ow, row, col
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    col = 0
                    for oh in range(Ho):
                        for ow in range(Wo):
                            o[b, row, col] = xp[b, c, i + stride * oh, j + stride * ow]
                            col += 1
    return out


def col2im(const double[:, :, ::1] cols, tuple padded_shape, int kh, int kw, int stride):
    cdef Py_ssize_t B = padded_shape[0], C = padded_shape[1]
    cdef Py_ssize_t Hp = padded_shape[2], Wp = padded_shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    out = np.zeros((B, C, Hp, Wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, oh, ow, row, col
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    col = 0
                    for oh in range(Ho):
                        for ow in range(Wo):
                            o[b, c, i + stride * oh, j + stride * ow] += cols[b, row, col]
                            col += 1
    return out
