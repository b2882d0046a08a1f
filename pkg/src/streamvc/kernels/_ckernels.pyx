# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Convolution gathers input columns in C and multiplies them through BLAS
``dgemm``; accumulation is float64 and results are rounded to float32 once.
"""

import numpy as np
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

from ..errors import ContractViolation

cdef double MASK_NEG = -1e9


def conv1d_valid(const float[:, ::1] x, const float[:, :, ::1] w, const float[::1] b,
                 Py_ssize_t dilation, Py_ssize_t stride):
    cdef Py_ssize_t cin = x.shape[0]
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t span = dilation * (k - 1)
    cdef Py_ssize_t tout = (x.shape[1] - span - 1) // stride + 1
    cdef Py_ssize_t n = cin * k
    cdef Py_ssize_t o, i, j, t, base
    out = np.empty((cout, max(tout, 0)), dtype=np.float32)
    if tout <= 0:
        return out
    cols_arr = np.empty((n, tout), dtype=np.float64)
    acc_arr = np.empty((cout, tout), dtype=np.float64)
    wd_arr = np.ascontiguousarray(np.asarray(w, dtype=np.float64).reshape(cout, n))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] acc = acc_arr
    cdef double[:, ::1] wd = wd_arr
    cdef float[:, ::1] y = out
    cdef int m_ = <int>tout, n_ = <int>cout, k_ = <int>n
    cdef double one = 1.0, zero = 0.0
    with nogil:
        for i in range(cin):
            for j in range(k):
                base = j * dilation
                for t in range(tout):
                    cols[i * k + j, t] = x[i, base + t * stride]
        # row-major acc[cout, tout] = wd @ cols, expressed column-major
        dgemm("N", "N", &m_, &n_, &k_, &one, &cols[0, 0], &m_, &wd[0, 0], &k_, &zero, &acc[0, 0], &m_)
        for o in range(cout):
            for t in range(tout):
                y[o, t] = <float>(acc[o, t] + b[o])
    return out


def masked_softmax(const double[:, :, ::1] scores, mask):
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = scores.shape[0]
    cdef Py_ssize_t tq = scores.shape[1]
    cdef Py_ssize_t tk = scores.shape[2]
    cdef Py_ssize_t a, q, j
    cdef double mx, s, v
    cdef int any_visible
    for q in range(tq):
        any_visible = 0
        for j in range(tk):
            if m[q, j]:
                any_visible = 1
                break
        if not any_visible:
            raise ContractViolation("attention row with no visible key")
    out = np.empty((h, tq, tk), dtype=np.float64)
    cdef double[:, :, ::1] p = out
    for a in range(h):
        for q in range(tq):
            mx = -1e300
            for j in range(tk):
                v = scores[a, q, j] + (0.0 if m[q, j] else MASK_NEG)
                p[a, q, j] = v
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(tk):
                v = exp(p[a, q, j] - mx)
                p[a, q, j] = v
                s += v
            for j in range(tk):
                p[a, q, j] /= s
    return out
