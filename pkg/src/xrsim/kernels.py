"""Hot numeric kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``XRSIM_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _kernels_py

ZOH = _kernels_py.ZOH
LINEAR = _kernels_py.LINEAR
TIME_TOL = _kernels_py.TIME_TOL

_ext = None
if os.environ.get("XRSIM_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _c2(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _impl(name, backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        return getattr(_ext, name)
    return getattr(_kernels_py, name)


def gmm_gram(X, Y, sigmas, alphas, backend=None):
    """Gaussian-mixture Gram matrix K_ij = sum_l a_l exp(-|x_i - y_j|^2 / 2 s_l^2)."""
    return _impl("gmm_gram", backend)(_c2(X), _c2(Y), _c2(sigmas), _c2(alphas))


def gmm_gram_grad(X, Y, sigmas, alphas, C, backend=None):
    """d/dX of sum_ij C_ij k(x_i, y_j); shape of X."""
    return _impl("gmm_gram_grad", backend)(
        _c2(X), _c2(Y), _c2(sigmas), _c2(alphas), _c2(C)
    )


def causal_interp(times, values, counts, init, instants, kind, backend=None):
    return _impl("causal_interp", backend)(
        _c2(times),
        _c2(values),
        np.ascontiguousarray(counts, dtype=np.int64),
        _c2(init),
        _c2(instants),
        int(kind),
    )
