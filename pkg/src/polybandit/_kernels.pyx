# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the sequential inner loops; same contracts as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from scipy.linalg.cython_blas cimport dgemv, dger, ddot

cnp.import_array()


def ucb_loop(double[::1] means, double[::1] noise, double logterm,
             cnp.int64_t[::1] counts, double[::1] sums):
    cdef Py_ssize_t K = means.shape[0], T = noise.shape[0], t, i, best
    cdef double v, best_val, c
    out = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] choices = out
    for t in range(T):
        best = -1
        best_val = -INFINITY
        for i in range(K):
            if counts[i] == 0:
                best = i
                break
            c = <double>counts[i]
            v = sums[i] / c + sqrt(logterm / c)
            if v > best_val:
                best = i
                best_val = v
        choices[t] = best
        counts[best] += 1
        sums[best] += means[best] + noise[t]
    return out


def linucb_loop(double[:, ::1] Phi, double[::1] means, double[::1] noise, double[::1] betas,
                double[:, ::1] Vinv, double[::1] theta, double[::1] pred, double[::1] bon):
    cdef int N = Phi.shape[0], D = Phi.shape[1], one = 1
    cdef Py_ssize_t T = noise.shape[0], t, j, i
    cdef double best_val, v, b, r, den, resid, alpha, zero = 0.0, unit = 1.0
    Vx_a = np.empty(D)
    u_a = np.empty(N)
    cdef double[::1] Vx = Vx_a
    cdef double[::1] u = u_a
    out = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] choices = out
    cdef char trans_n = b'N'
    cdef char trans_t = b'T'
    for t in range(T):
        i = 0
        best_val = -INFINITY
        for j in range(N):
            b = bon[j]
            v = pred[j] + betas[t] * (sqrt(b) if b > 0 else 0.0)
            if v > best_val:
                best_val = v
                i = j
        choices[t] = i
        r = means[i] + noise[t]
        # Vx = Vinv x (Vinv symmetric, so row/column order does not matter)
        dgemv(&trans_n, &D, &D, &unit, &Vinv[0, 0], &D, &Phi[i, 0], &one, &zero, &Vx[0], &one)
        den = 1.0 + ddot(&D, &Phi[i, 0], &one, &Vx[0], &one)
        resid = (r - pred[i]) / den
        # u = Phi Vx: Phi in C order is a D x N column-major matrix
        dgemv(&trans_t, &D, &N, &unit, &Phi[0, 0], &D, &Vx[0], &one, &zero, &u[0], &one)
        for j in range(D):
            theta[j] += resid * Vx[j]
        for j in range(N):
            pred[j] += resid * u[j]
            bon[j] -= u[j] * u[j] / den
        alpha = -1.0 / den
        dger(&D, &D, &alpha, &Vx[0], &one, &Vx[0], &one, &Vinv[0, 0], &D)
    return out
