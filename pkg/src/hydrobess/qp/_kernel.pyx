# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ADMM iteration kernel (dense, BLAS level 2)."""

import numpy as np

from scipy.linalg.cython_blas cimport dgemv


def admm_iterate(double[::1] x, double[::1] z, double[::1] y, double[::1] dy,
                 const double[:, ::1] Minv, const double[:, ::1] A,
                 const double[::1] q, const double[::1] l, const double[::1] u,
                 const double[::1] rho, double sigma, double alpha, int n_iter):
    """Run ``n_iter`` relaxed ADMM iterations in place.

    See ``_fallback.admm_iterate`` for the argument contract.
    """
    cdef int n = x.shape[0]
    cdef int m = z.shape[0]
    cdef int it, i
    cdef double zr, zn, d
    cdef double one = 1.0, zero = 0.0
    cdef int inc = 1
    cdef char trans_n = b'N'
    cdef char trans_t = b'T'
    cdef double[::1] w_m = np.empty(m)
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] xt = np.empty(n)
    cdef double[::1] zt = np.empty(m)

    for it in range(n_iter):
        for i in range(m):
            w_m[i] = rho[i] * z[i] - y[i]
        for i in range(n):
            rhs[i] = sigma * x[i] - q[i]
        # rhs += A' w_m ; A is C-ordered (m, n) == column-major (n, m)
        if m > 0:
            dgemv(&trans_n, &n, &m, &one, <double*>&A[0, 0], &n,
                  &w_m[0], &inc, &one, &rhs[0], &inc)
        # xt = Minv rhs (symmetric)
        dgemv(&trans_n, &n, &n, &one, <double*>&Minv[0, 0], &n,
              &rhs[0], &inc, &zero, &xt[0], &inc)
        # zt = A xt
        if m > 0:
            dgemv(&trans_t, &n, &m, &one, <double*>&A[0, 0], &n,
                  &xt[0], &inc, &zero, &zt[0], &inc)
        for i in range(n):
            x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
        for i in range(m):
            zr = alpha * zt[i] + (1.0 - alpha) * z[i]
            zn = zr + y[i] / rho[i]
            if zn < l[i]:
                zn = l[i]
            elif zn > u[i]:
                zn = u[i]
            d = rho[i] * (zr - zn)
            dy[i] = d
            y[i] += d
            z[i] = zn
