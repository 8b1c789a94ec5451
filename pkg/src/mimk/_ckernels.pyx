# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: direct 2-D convolution, radix-2 FFT butterflies,
and elementwise erf.  Semantics mirror the numpy fallback in backend.py;
tests compare the two on random inputs."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf as c_erf

cnp.import_array()


def erf(cnp.ndarray x):
    cdef cnp.ndarray flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] xv = flat
    cdef cnp.ndarray out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_erf(xv[i])
    return out.reshape(np.asarray(x).shape)


def conv2d_forward(double[:, :, ::1] x, double[:, :, :, ::1] w, int stride):
    """Valid cross-correlation of x [Cin,H,W] with w [Cout,Cin,k,k]."""
    cdef Py_ssize_t cin = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = (H - k) // stride + 1, Wo = (W - k) // stride + 1
    out_arr = np.zeros((cout, Ho, Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, ci, i, j, p, q
    cdef double acc
    for co in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for ci in range(cin):
                    for p in range(k):
                        for q in range(k):
                            acc += x[ci, i * stride + p, j * stride + q] * w[co, ci, p, q]
                out[co, i, j] = acc
    return out_arr


def conv2d_backward_x(double[:, :, ::1] g, double[:, :, :, ::1] w, int stride,
                      Py_ssize_t H, Py_ssize_t W):
    """Gradient w.r.t. the conv input: scatter g through the kernel."""
    cdef Py_ssize_t cout = g.shape[0], Ho = g.shape[1], Wo = g.shape[2]
    cdef Py_ssize_t cin = w.shape[1], k = w.shape[2]
    dx_arr = np.zeros((cin, H, W), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t co, ci, i, j, p, q
    cdef double gv
    for co in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                gv = g[co, i, j]
                for ci in range(cin):
                    for p in range(k):
                        for q in range(k):
                            dx[ci, i * stride + p, j * stride + q] += gv * w[co, ci, p, q]
    return dx_arr


def conv2d_backward_w(double[:, :, ::1] g, double[:, :, ::1] x, int stride, Py_ssize_t k):
    """Gradient w.r.t. the conv kernel."""
    cdef Py_ssize_t cout = g.shape[0], Ho = g.shape[1], Wo = g.shape[2]
    cdef Py_ssize_t cin = x.shape[0]
    dw_arr = np.zeros((cout, cin, k, k), dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t co, ci, i, j, p, q
    cdef double gv
    for co in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                gv = g[co, i, j]
                for ci in range(cin):
                    for p in range(k):
                        for q in range(k):
                            dw[co, ci, p, q] += gv * x[ci, i * stride + p, j * stride + q]
    return dw_arr


def fft_rows(double complex[:, ::1] z, cnp.ndarray rev_idx, double complex[::1] twiddles):
    """Unnormalized radix-2 DIT FFT of every row, in place.

    rev_idx is the bit-reversal permutation; twiddles holds the per-stage
    factors concatenated (stage with half-size m starts at offset m-1), with
    the conjugation for inverse transforms already applied by the caller.
    The butterfly order matches the numpy fallback bit for bit.
    """
    cdef Py_ssize_t rows = z.shape[0], n = z.shape[1]
    cdef Py_ssize_t[::1] rev = np.ascontiguousarray(rev_idx, dtype=np.intp)
    cdef Py_ssize_t r, i, m, L, start, off
    cdef double complex t, u, wv
    cdef double complex[::1] buf
    scratch = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] tmp = scratch
    for r in range(rows):
        buf = z[r]
        for i in range(n):
            tmp[i] = buf[rev[i]]
        for i in range(n):
            buf[i] = tmp[i]
        L = 2
        while L <= n:
            m = L // 2
            off = m - 1
            for start in range(0, n, L):
                for i in range(m):
                    wv = twiddles[off + i]
                    t = wv * buf[start + m + i]
                    u = buf[start + i]
                    buf[start + i] = u + t
                    buf[start + m + i] = u - t
            L *= 2
    return None
