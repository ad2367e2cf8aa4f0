import os
import subprocess
import sys

import numpy as np
import pytest

from xrsim import kernels

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_python_gram_matches_brute_force(rng):
    X, Y = rng.standard_normal((7, 3)), rng.standard_normal((5, 3))
    s, a = np.array([0.5, 2.0]), np.array([0.3, 0.7])
    K = kernels.gmm_gram(X, Y, s, a, backend="python")
    ref = np.array([[sum(al * np.exp(-np.sum((x - y) ** 2) / (2 * si * si)) for al, si in zip(a, s))
                     for y in Y] for x in X])
    assert np.allclose(K, ref, rtol=1e-13, atol=0)


def test_python_gram_grad_matches_fd(rng):
    X, Y = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    s, a = np.array([0.8, 1.6]), np.array([0.5, 0.5])
    C = rng.standard_normal((4, 3))
    G = kernels.gmm_gram_grad(X, Y, s, a, C, backend="python")
    h = 1e-6
    fd = np.zeros_like(X)
    for i in range(4):
        for k in range(2):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, k] += h; Xm[i, k] -= h
            fd[i, k] = (np.sum(C * kernels.gmm_gram(Xp, Y, s, a, backend="python"))
                        - np.sum(C * kernels.gmm_gram(Xm, Y, s, a, backend="python"))) / (2 * h)
    assert np.allclose(G, fd, rtol=1e-6, atol=1e-9)


@needs_ext
def test_backend_parity_gram(rng):
    X, Y = rng.standard_normal((30, 4)), rng.standard_normal((20, 4))
    s, a = np.array([0.25, 0.5, 1.0, 2.0, 4.0]), np.full(5, 0.2)
    C = rng.standard_normal((30, 20))
    assert np.allclose(kernels.gmm_gram(X, Y, s, a, backend="cython"),
                       kernels.gmm_gram(X, Y, s, a, backend="python"), rtol=1e-12, atol=1e-15)
    assert np.allclose(kernels.gmm_gram_grad(X, Y, s, a, C, backend="cython"),
                       kernels.gmm_gram_grad(X, Y, s, a, C, backend="python"), rtol=1e-10, atol=1e-13)


def test_forced_fallback():
    env = dict(os.environ, XRSIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import xrsim; print(xrsim.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
