# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: valid 1D convolution and pair max-pooling.

Convolution is lowered to an im2col buffer plus one BLAS dgemm call per
batch, with the window copies and the col2im scatter-add done in C.  Layouts
and semantics match kernels_numpy exactly (same window row ordering), so the
two backends are interchangeable.
"""

import numpy as np

from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"


cdef inline void gemm_rm(bint ta, bint tb, int m, int n, int k,
                         double alpha, const double* a, int lda,
                         const double* b, int ldb,
                         double beta, double* c, int ldc) noexcept nogil:
    # Row-major C[m,n] = alpha * op(A) op(B) + beta * C, expressed through
    # column-major BLAS by computing C^T = op(B)^T op(A)^T.
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    dgemm(&ctb, &cta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void im2col(const double[:, :, ::1] x, int kernel, double[:, ::1] cols) noexcept nogil:
    cdef Py_ssize_t batch = x.shape[0], length = x.shape[1], c_in = x.shape[2]
    cdef Py_ssize_t l_out = length - kernel + 1
    cdef Py_ssize_t n, i, row = 0
    cdef size_t span = kernel * c_in * sizeof(double)
    for n in range(batch):
        for i in range(l_out):
            memcpy(&cols[row, 0], &x[n, i, 0], span)
            row += 1


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef int batch = x.shape[0], length = x.shape[1], c_in = x.shape[2]
    cdef int f = w.shape[0], kernel = w.shape[1]
    cdef int l_out = length - kernel + 1
    cdef int m = batch * l_out, kc = kernel * c_in

    cols_arr = np.empty((m, kc))
    out_arr = np.empty((batch, l_out, f))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double* yp
    cdef Py_ssize_t row, j
    with nogil:
        im2col(x, kernel, cols)
        # out_flat (M, F) = cols (M, KC) @ w_flat^T (KC, F)
        gemm_rm(0, 1, m, f, kc, 1.0, &cols[0, 0], kc, &w[0, 0, 0], kc,
                0.0, &out[0, 0, 0], f)
        yp = &out[0, 0, 0]
        for row in range(m):
            for j in range(f):
                yp[row * f + j] += b[j]
    return out_arr


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w, double[:, :, ::1] dy):
    cdef int batch = x.shape[0], length = x.shape[1], c_in = x.shape[2]
    cdef int f = w.shape[0], kernel = w.shape[1]
    cdef int l_out = length - kernel + 1
    cdef int m = batch * l_out, kc = kernel * c_in

    cols_arr = np.empty((m, kc))
    dcols_arr = np.empty((m, kc))
    dx_arr = np.zeros((batch, length, c_in))
    dw_arr = np.empty((f, kernel, c_in))
    db_arr = np.zeros(f)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] dcols = dcols_arr
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, i, j, q, row
    with nogil:
        im2col(x, kernel, cols)
        # dw_flat (F, KC) = dy_flat^T (F, M) @ cols (M, KC)
        gemm_rm(1, 0, f, kc, m, 1.0, &dy[0, 0, 0], f, &cols[0, 0], kc,
                0.0, &dw[0, 0, 0], kc)
        # dcols (M, KC) = dy_flat (M, F) @ w_flat (F, KC)
        gemm_rm(0, 0, m, kc, f, 1.0, &dy[0, 0, 0], f, &w[0, 0, 0], kc,
                0.0, &dcols[0, 0], kc)
        row = 0
        for n in range(batch):
            for i in range(l_out):
                for j in range(f):
                    db[j] += dy[n, i, j]
                row += 1
        # col2im: scatter window gradients back onto the input
        row = 0
        for n in range(batch):
            for i in range(l_out):
                for j in range(kernel):
                    for q in range(c_in):
                        dx[n, i + j, q] += dcols[row, j * c_in + q]
                row += 1
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(double[:, :, ::1] x):
    cdef Py_ssize_t batch = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t l_out = length // 2
    out_arr = np.empty((batch, l_out, c))
    idx_arr = np.empty((batch, l_out, c), dtype=np.int8)
    cdef double[:, :, ::1] out = out_arr
    cdef signed char[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, i, q
    cdef double a0, a1
    with nogil:
        for n in range(batch):
            for i in range(l_out):
                for q in range(c):
                    a0 = x[n, 2 * i, q]
                    a1 = x[n, 2 * i + 1, q]
                    if a1 > a0:  # ties keep the first index
                        out[n, i, q] = a1
                        idx[n, i, q] = 1
                    else:
                        out[n, i, q] = a0
                        idx[n, i, q] = 0
    return out_arr, idx_arr


def maxpool2_backward(double[:, :, ::1] dy, signed char[:, :, ::1] idx, int length):
    cdef Py_ssize_t batch = dy.shape[0], l_out = dy.shape[1], c = dy.shape[2]
    dx_arr = np.zeros((batch, length, c))
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, q
    with nogil:
        for n in range(batch):
            for i in range(l_out):
                for q in range(c):
                    dx[n, 2 * i + idx[n, i, q], q] = dy[n, i, q]
    return dx_arr
