# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: CSR sparse x dense products and lazy Adam row updates.

Every output row is written by exactly one thread and accumulated in CSR
order, so results do not depend on the thread count.
"""
import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt

cnp.import_array()


def csr_matmul(const cnp.int64_t[::1] indptr,
               const cnp.int64_t[::1] indices,
               const double[::1] data,
               const double[:, ::1] dense,
               Py_ssize_t n_rows):
    cdef Py_ssize_t d = dense.shape[1]
    out_arr = np.zeros((n_rows, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef double w
    cdef double* orow
    cdef const double* drow
    if n_rows == 0 or d == 0:
        return out_arr
    for i in prange(n_rows, nogil=True, schedule="static"):
        orow = &out[i, 0]
        for p in range(indptr[i], indptr[i + 1]):
            w = data[p]
            drow = &dense[indices[p], 0]
            for c in range(d):
                orow[c] = orow[c] + w * drow[c]
    return out_arr


def lazy_adam_rows(double[:, ::1] param,
                   double[:, ::1] exp_avg,
                   double[:, ::1] exp_avg_sq,
                   const double[:, ::1] grad,
                   const cnp.int64_t[::1] rows,
                   double lr, double beta1, double beta2, double eps,
                   double bias_corr1, double bias_corr2):
    cdef Py_ssize_t d = param.shape[1]
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t t, r, c
    cdef double g, m, v
    for t in prange(n, nogil=True, schedule="static"):
        r = rows[t]
        for c in range(d):
            g = grad[r, c]
            m = beta1 * exp_avg[r, c] + (1.0 - beta1) * g
            v = beta2 * exp_avg_sq[r, c] + (1.0 - beta2) * (g * g)
            exp_avg[r, c] = m
            exp_avg_sq[r, c] = v
            param[r, c] = param[r, c] - lr * (m / bias_corr1) / (sqrt(v / bias_corr2) + eps)
