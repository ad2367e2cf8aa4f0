"""Pure-numpy implementations of the hot kernels.

These are the reference path; ``_ckernels.pyx`` mirrors them loop-for-loop.
"""

import numpy as np

# Timestamps are floats built from different expressions ((t-1)*tau + k/f vs
# i/f_exec); anything closer than this is treated as the same instant.
TIME_TOL = 1e-9

ZOH = 0
LINEAR = 1


def _sq_dists(X, Y):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", Y, Y)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def gmm_gram(X, Y, sigmas, alphas):
    d2 = _sq_dists(X, Y)
    K = np.zeros_like(d2)
    for a, s in zip(alphas, sigmas):
        K += a * np.exp(-d2 / (2.0 * s * s))
    return K


def gmm_gram_grad(X, Y, sigmas, alphas, C):
    """Gradient of sum_ij C_ij k(x_i, y_j) with respect to the rows of X."""
    d2 = _sq_dists(X, Y)
    S = np.zeros_like(d2)
    for a, s in zip(alphas, sigmas):
        S += (a / (s * s)) * np.exp(-d2 / (2.0 * s * s))
    M = C * S
    return M @ Y - M.sum(axis=1)[:, None] * X


def causal_interp(times, values, counts, init, instants, kind):
    """Evaluate each dimension's received samples at the given instants.

    ``times``/``values`` are (J, cap) buffers, only the first ``counts[j]``
    entries of row j are valid.  Returns an (n_instants, J) array.
    """
    J = times.shape[0]
    n = instants.shape[0]
    out = np.empty((n, J))
    for j in range(J):
        c = int(counts[j])
        if c == 0:
            out[:, j] = init[j]
            continue
        ts = times[j, :c]
        vs = values[j, :c]
        idx = np.searchsorted(ts, instants + TIME_TOL, side="right") - 1
        have = idx >= 0
        col = np.full(n, init[j], dtype=float)
        if kind == ZOH or c == 1:
            col[have] = vs[idx[have]]
            out[:, j] = col
            continue
        i2 = idx[have]
        v2 = vs[i2]
        res = v2.copy()
        ext = i2 >= 1
        if np.any(ext):
            k2 = i2[ext]
            t2 = ts[k2]
            t1 = ts[k2 - 1]
            period = t2 - t1
            dt = instants[have][ext] - t2
            dt = np.where(dt <= TIME_TOL, 0.0, np.minimum(dt, 2.0 * period))
            slope = (vs[k2] - vs[k2 - 1]) / period
            res[ext] = vs[k2] + slope * dt
        col[have] = res
        out[:, j] = col
    return out
