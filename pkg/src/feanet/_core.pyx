# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_fallback`` for the reference semantics."""
import numpy as np
from cython.parallel cimport prange

NAME = "cython"

cdef int _threads = 1


def set_num_threads(int n):
    global _threads
    _threads = n if n > 0 else 1


# image offsets of local nodes 1..4 from an element's top-left node
cdef int[4] DR = [1, 1, 0, 0]
cdef int[4] DC = [0, 1, 1, 0]


cdef inline void _conv_row(const double[:, :, ::1] u, const double[:, :, :, ::1] w,
                           double[:, :, ::1] out, Py_ssize_t i) noexcept nogil:
    # one stencil tap at a time against a whole image row keeps the inner
    # loop long; single-channel images take a scalar fast path
    cdef Py_ssize_t n = u.shape[0], P = w.shape[2], Q = w.shape[3]
    cdef Py_ssize_t j, r, c, p, q, j0, j1
    cdef const double* up = &u[0, 0, 0]
    cdef const double* urow
    cdef double* op = &out[i, 0, 0]
    cdef const double* wrc
    cdef const double* src
    cdef double* dst
    cdef double coef, acc
    for j in range(n * P):
        op[j] = 0.0
    for r in range(3):
        if i + r - 1 < 0 or i + r - 1 >= n:
            continue
        urow = up + (i + r - 1) * n * Q
        for c in range(3):
            j0 = 1 if c == 0 else 0
            j1 = n - 1 if c == 2 else n
            if P == 1 and Q == 1:
                coef = w[r, c, 0, 0]
                if coef != 0.0:
                    for j in range(j0, j1):
                        op[j] += coef * urow[j + c - 1]
                continue
            wrc = &w[r, c, 0, 0]
            for j in range(j0, j1):
                src = urow + (j + c - 1) * Q
                dst = op + j * P
                for p in range(P):
                    acc = 0.0
                    for q in range(Q):
                        acc = acc + wrc[p * Q + q] * src[q]
                    dst[p] += acc


def conv3x3(const double[:, :, ::1] u, const double[:, :, :, ::1] w):
    cdef Py_ssize_t n = u.shape[0], i
    out_arr = np.zeros((n, n, w.shape[2]))
    cdef double[:, :, ::1] out = out_arr
    for i in prange(n, nogil=True, num_threads=_threads, schedule="static"):
        _conv_row(u, w, out, i)
    return out_arr


cdef inline void _biphase_row(const double[:, :, ::1] u, const double[:, ::1] h,
                              const double[:, :, :, :, ::1] theta,
                              double[:, :, ::1] out, Py_ssize_t i) noexcept nogil:
    # node-major gather: node (i, j) is local node a of element (ea, eb)
    cdef Py_ssize_t n = u.shape[0], P = theta.shape[1], Q = theta.shape[2]
    cdef Py_ssize_t j, a, b, p, q, ea, eb
    cdef double he, t0, t1, acc
    for j in range(n):
        for p in range(P):
            out[i, j, p] = 0.0
        for a in range(4):
            ea = i - DR[a]
            eb = j - DC[a]
            if ea < 0 or eb < 0 or ea >= n - 1 or eb >= n - 1:
                continue
            he = h[ea, eb]
            for p in range(P):
                acc = 0.0
                for q in range(Q):
                    for b in range(4):
                        t1 = theta[1, p, q, a, b]
                        t0 = theta[0, p, q, a, b]
                        acc = acc + (t1 + he * (t0 - t1)) * u[ea + DR[b], eb + DC[b], q]
                out[i, j, p] += acc


def biphase_apply(const double[:, :, ::1] u, const double[:, ::1] h,
                  const double[:, :, :, :, ::1] theta):
    cdef Py_ssize_t n = u.shape[0], i
    out_arr = np.zeros((n, n, theta.shape[1]))
    cdef double[:, :, ::1] out = out_arr
    for i in prange(n, nogil=True, num_threads=_threads, schedule="static"):
        _biphase_row(u, h, theta, out, i)
    return out_arr


def element_bilinear(const double[:, :, ::1] u, const double[:, :, ::1] vhat,
                     const double[:, :, :, ::1] d):
    cdef Py_ssize_t m = u.shape[0] - 1, P = d.shape[0], Q = d.shape[1]
    cdef Py_ssize_t ea, eb, a, b, p, q
    cdef double acc
    g_arr = np.zeros((m, m))
    cdef double[:, ::1] g = g_arr
    for ea in prange(m, nogil=True, num_threads=_threads, schedule="static"):
        for eb in range(m):
            acc = 0.0
            for p in range(P):
                for a in range(4):
                    for q in range(Q):
                        for b in range(4):
                            acc = acc + (vhat[ea + DR[a], eb + DC[a], p] * d[p, q, a, b]
                                         * u[ea + DR[b], eb + DC[b], q])
            g[ea, eb] = acc
    return g_arr


def element_outer(const double[:, :, ::1] u, const double[:, :, ::1] vhat, const double[:, ::1] h):
    cdef Py_ssize_t m = u.shape[0] - 1, P = vhat.shape[2], Q = u.shape[2]
    cdef Py_ssize_t ea, eb, a, b, p, q
    cdef double prod
    # per-row private accumulators, merged afterwards
    rows_arr = np.zeros((m, 2, P, Q, 4, 4))
    cdef double[:, :, :, :, :, ::1] rows = rows_arr
    for ea in prange(m, nogil=True, num_threads=_threads, schedule="static"):
        for eb in range(m):
            for p in range(P):
                for a in range(4):
                    for q in range(Q):
                        for b in range(4):
                            prod = vhat[ea + DR[a], eb + DC[a], p] * u[ea + DR[b], eb + DC[b], q]
                            rows[ea, 0, p, q, a, b] += h[ea, eb] * prod
                            rows[ea, 1, p, q, a, b] += (1.0 - h[ea, eb]) * prod
    return rows_arr.sum(axis=0)


cdef double _jacobi_update(double[:, :, ::1] u, const double[:, :, ::1] v,
                           const double[:, :, ::1] ku, const double[:, :, ::1] pinv,
                           const unsigned char[:, ::1] free, double omega) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], C = u.shape[2], i, j, c
    cdef double r, total = 0.0
    for i in range(n):
        for j in range(n):
            if not free[i, j]:
                continue
            for c in range(C):
                r = v[i, j, c] - ku[i, j, c]
                total += r * r
                u[i, j, c] += omega * pinv[i, j, c] * r
    return total


def jacobi_homogeneous(double[:, :, ::1] u, const double[:, :, ::1] v,
                       const double[:, :, :, ::1] w, const double[:, :, ::1] pinv,
                       const unsigned char[:, ::1] free,
                       double omega, Py_ssize_t steps):
    cdef Py_ssize_t n = u.shape[0], t, i
    ku_arr = np.zeros((n, n, w.shape[2]))
    res_arr = np.empty(steps)
    cdef double[:, :, ::1] ku = ku_arr
    cdef double[::1] res = res_arr
    for t in range(steps):
        for i in prange(n, nogil=True, num_threads=_threads, schedule="static"):
            _conv_row(u, w, ku, i)
        res[t] = _jacobi_update(u, v, ku, pinv, free, omega)
    return res_arr


def jacobi_biphase(double[:, :, ::1] u, const double[:, :, ::1] v, const double[:, ::1] h,
                   const double[:, :, :, :, ::1] theta, const double[:, :, ::1] pinv,
                   const unsigned char[:, ::1] free, double omega, Py_ssize_t steps):
    cdef Py_ssize_t n = u.shape[0], t, i
    ku_arr = np.zeros((n, n, theta.shape[1]))
    res_arr = np.empty(steps)
    cdef double[:, :, ::1] ku = ku_arr
    cdef double[::1] res = res_arr
    for t in range(steps):
        for i in prange(n, nogil=True, num_threads=_threads, schedule="static"):
            _biphase_row(u, h, theta, ku, i)
        res[t] = _jacobi_update(u, v, ku, pinv, free, omega)
    return res_arr
