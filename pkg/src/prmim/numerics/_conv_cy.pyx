# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled depthwise convolution kernels (hot path of the pipeline)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv_forward(double[:, :, ::1] x, double[:, :, ::1] kernel, double[::1] bias):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t k = kernel.shape[1], p = k // 2
    cdef Py_ssize_t ch, i, j, di, dj, ii, jj
    cdef double acc
    out_arr = np.empty((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc = bias[ch]
                for di in range(k):
                    ii = i + di - p
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(k):
                        jj = j + dj - p
                        if jj < 0 or jj >= w:
                            continue
                        acc += kernel[ch, di, dj] * x[ch, ii, jj]
                out[ch, i, j] = acc
    return out_arr


def conv_backward(double[:, :, ::1] x, double[:, :, ::1] kernel,
                  double[:, :, ::1] gout):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t k = kernel.shape[1], p = k // 2
    cdef Py_ssize_t ch, i, j, di, dj, ii, jj
    cdef double g, s
    gx_arr = np.zeros((c, h, w), dtype=np.float64)
    gk_arr = np.zeros((c, k, k), dtype=np.float64)
    gb_arr = np.zeros(c, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double[::1] gb = gb_arr
    for ch in range(c):
        s = 0.0
        for i in range(h):
            for j in range(w):
                g = gout[ch, i, j]
                s += g
                for di in range(k):
                    ii = i + di - p
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(k):
                        jj = j + dj - p
                        if jj < 0 or jj >= w:
                            continue
                        gk[ch, di, dj] += g * x[ch, ii, jj]
                        gx[ch, ii, jj] += g * kernel[ch, di, dj]
        gb[ch] = s
    return gx_arr, gk_arr, gb_arr
