# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tridiagonal time-marching kernel for 1-D grids."""

import numpy as np

from libc.math cimport isfinite


def march_tridiag(const double[::1] ml, const double[::1] md, const double[::1] mu,
                  const double[::1] el, const double[::1] ed, const double[::1] eu,
                  const double[:, ::1] start, const double[:, :, ::1] source,
                  const double[:, ::1] sigma, const double[:, ::1] increments,
                  const double[:, ::1] boundary, double[:, :, ::1] out):
    """Same contract as ``_march.march`` for a tridiagonal system.

    The implicit matrix is given by bands (ml, md, mu) and the explicit one by
    (el, ed, eu); row 0 and row n-1 are boundary rows.  Returns 0 on success,
    or the first time level that holds a non-finite value.
    """
    cdef Py_ssize_t P = start.shape[0]
    cdef Py_ssize_t n = start.shape[1]
    cdef Py_ssize_t steps = increments.shape[1]
    cdef bint shared = source.shape[0] == 1
    cdef Py_ssize_t p, k, j
    cdef double dB
    cdef int status = 0
    cdef const double* src
    cdef const double* sig
    cdef const double* prev
    cdef double* nxt

    cp_arr = np.empty(n)
    inv_arr = np.empty(n)
    cdef double[::1] cprime = cp_arr
    cdef double[::1] inv = inv_arr

    # Thomas elimination coefficients, shared by every path and step
    inv[0] = 1.0 / md[0]
    cprime[0] = mu[0] * inv[0]
    for j in range(1, n):
        inv[j] = 1.0 / (md[j] - ml[j] * cprime[j - 1])
        cprime[j] = mu[j] * inv[j]

    with nogil:
        for p in range(P):
            for j in range(n):
                out[p, 0, j] = start[p, j]
            for k in range(steps):
                dB = increments[p, k]
                src = &source[0 if shared else p, k, 0]
                sig = &sigma[k, 0]
                prev = &out[p, k, 0]
                nxt = &out[p, k + 1, 0]
                # explicit part fused with forward elimination
                nxt[0] = boundary[k + 1, 0] * inv[0]
                for j in range(1, n - 1):
                    nxt[j] = (el[j] * prev[j - 1] + ed[j] * prev[j] + eu[j] * prev[j + 1]
                              + src[j] + sig[j] * dB - ml[j] * nxt[j - 1]) * inv[j]
                nxt[n - 1] = (boundary[k + 1, n - 1] - ml[n - 1] * nxt[n - 2]) * inv[n - 1]
                for j in range(n - 2, -1, -1):
                    nxt[j] = nxt[j] - cprime[j] * nxt[j + 1]
                if status == 0:
                    for j in range(n):
                        if not isfinite(nxt[j]):
                            status = <int>(k + 1)
                            break
    return status
