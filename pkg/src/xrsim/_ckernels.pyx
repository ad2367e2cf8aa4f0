# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double TIME_TOL = 1e-9


def gmm_gram(const double[:, ::1] X, const double[:, ::1] Y,
             const double[::1] sigmas, const double[::1] alphas):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t L = sigmas.shape[0]
    cdef Py_ssize_t i, j, k, l
    cdef double d2, diff, acc
    cdef double[::1] inv2s2 = np.empty(L)
    for l in range(L):
        inv2s2[l] = 1.0 / (2.0 * sigmas[l] * sigmas[l])
    out = np.empty((n, m))
    cdef double[:, ::1] K = out
    with nogil:
        for i in range(n):
            for j in range(m):
                d2 = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    d2 = d2 + diff * diff
                acc = 0.0
                for l in range(L):
                    acc = acc + alphas[l] * exp(-d2 * inv2s2[l])
                K[i, j] = acc
    return out


def gmm_gram_grad(const double[:, ::1] X, const double[:, ::1] Y,
                  const double[::1] sigmas, const double[::1] alphas,
                  const double[:, ::1] C):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t L = sigmas.shape[0]
    cdef Py_ssize_t i, j, k, l
    cdef double d2, diff, s, coef
    cdef double[::1] inv2s2 = np.empty(L)
    cdef double[::1] ainvs2 = np.empty(L)
    for l in range(L):
        inv2s2[l] = 1.0 / (2.0 * sigmas[l] * sigmas[l])
        ainvs2[l] = alphas[l] / (sigmas[l] * sigmas[l])
    out = np.zeros((n, d))
    cdef double[:, ::1] G = out
    with nogil:
        for i in range(n):
            for j in range(m):
                if C[i, j] == 0.0:
                    continue
                d2 = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    d2 = d2 + diff * diff
                s = 0.0
                for l in range(L):
                    s = s + ainvs2[l] * exp(-d2 * inv2s2[l])
                coef = C[i, j] * s
                for k in range(d):
                    G[i, k] = G[i, k] + coef * (Y[j, k] - X[i, k])
    return out


def causal_interp(const double[:, ::1] times, const double[:, ::1] values,
                  const long[::1] counts, const double[::1] init,
                  const double[::1] instants, int kind):
    cdef Py_ssize_t J = times.shape[0], n = instants.shape[0]
    cdef Py_ssize_t j, q, lo, hi, mid, c, idx
    cdef double inst, t1, t2, period, dt
    out = np.empty((n, J))
    cdef double[:, ::1] res = out
    with nogil:
        for j in range(J):
            c = counts[j]
            for q in range(n):
                inst = instants[q] + TIME_TOL
                # last index with times <= inst
                lo = 0
                hi = c
                while lo < hi:
                    mid = (lo + hi) // 2
                    if times[j, mid] <= inst:
                        lo = mid + 1
                    else:
                        hi = mid
                idx = lo - 1
                if idx < 0:
                    res[q, j] = init[j]
                elif kind == 0 or idx == 0:
                    res[q, j] = values[j, idx]
                else:
                    t2 = times[j, idx]
                    t1 = times[j, idx - 1]
                    period = t2 - t1
                    dt = instants[q] - t2
                    if dt <= TIME_TOL:
                        dt = 0.0
                    elif dt > 2.0 * period:
                        dt = 2.0 * period
                    res[q, j] = values[j, idx] + (values[j, idx] - values[j, idx - 1]) / period * dt
    return out
