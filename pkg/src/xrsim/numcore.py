"""Dense numeric building blocks: a small tanh MLP with exact backprop,
Gaussian-mixture kernels, a ridge solver and an Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist

from . import kernels
from .errors import DegenerateError, InvalidArgument, NumericalError


class MLP:
    """Feed-forward network, tanh on hidden layers, linear output.

    Weights are stored as (fan_in, fan_out) so a batch ``x`` of shape
    (n, fan_in) maps through ``x @ W + b``.  The flat parameter view
    concatenates W1, b1, W2, b2, ... in row-major order.
    """

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise InvalidArgument("an MLP needs at least input and output sizes")
        if len(weights) != len(self.layer_sizes) - 1 or len(biases) != len(weights):
            raise InvalidArgument("layer count does not match layer_sizes")
        for i, (W, b) in enumerate(zip(weights, biases)):
            shape = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if W.shape != shape or b.shape != (shape[1],):
                raise InvalidArgument(f"layer {i} has shape {W.shape}, expected {shape}")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, layer_sizes, seed):
        """Seeded Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layer_sizes, weights, biases)

    @classmethod
    def zeros(cls, layer_sizes):
        return cls(
            layer_sizes,
            [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])],
            [np.zeros(b) for b in layer_sizes[1:]],
        )

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise InvalidArgument(f"expected {self.n_params} parameters, got {vec.shape}")
        pos = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[i] = vec[pos : pos + b.size].copy()
            pos += b.size

    def with_flat(self, vec):
        net = self.copy()
        net.set_flat(vec)
        return net

    def copy(self):
        return MLP(self.layer_sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, x, keep=False):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise InvalidArgument(f"input width {h.shape[1]} != {self.in_dim}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        out = h[0] if single else h
        if keep:
            return out, acts
        return out

    def __call__(self, x):
        return self.forward(x)

    def backward(self, acts, upstream):
        """Flat gradient of sum(output * upstream) given cached activations."""
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise InvalidArgument(f"upstream shape {g.shape} != output {acts[-1].shape}")
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads.append((g.sum(axis=0), h_in.T @ g))
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        grads.reverse()
        return np.concatenate([np.concatenate([dW.ravel(), db]) for db, dW in grads])

    def input_grad(self, acts, upstream):
        """Gradient of sum(output * upstream) with respect to the input batch."""
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        for i in range(len(self.weights) - 1, -1, -1):
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (1.0 - acts[i] ** 2)
        return g

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "params": self.flat().tolist()}

    @classmethod
    def from_dict(cls, d):
        net = cls.zeros(d["layer_sizes"])
        net.set_flat(np.array(d["params"], dtype=np.float64))
        return net


def mlp_forward(net, x):
    return net.forward(x)


def mlp_backward(net, x, upstream_grad):
    _, acts = net.forward(x, keep=True)
    return net.backward(acts, upstream_grad)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian mixture kernel sum_l alpha_l exp(-|z - z'|^2 / (2 sigma_l^2))."""

    alphas: tuple
    sigmas: tuple

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        s = np.asarray(self.sigmas, dtype=np.float64)
        if a.ndim != 1 or a.shape != s.shape or a.size == 0:
            raise InvalidArgument("alphas and sigmas must be equal-length non-empty sequences")
        if np.any(a <= 0) or abs(a.sum() - 1.0) > 1e-12:
            raise InvalidArgument("mixture weights must be positive and sum to 1")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise InvalidArgument("kernel widths must be positive and finite")
        object.__setattr__(self, "alphas", tuple(float(x) for x in a))
        object.__setattr__(self, "sigmas", tuple(float(x) for x in s))

    @classmethod
    def ladder(cls, sigma0, L=5):
        """Equal weights, widths 2^(l-3) * sigma0 for l = 1..L."""
        return cls(tuple([1.0 / L] * L), tuple(2.0 ** (l - 3) * sigma0 for l in range(1, L + 1)))

    @classmethod
    def single(cls, sigma):
        return cls((1.0,), (float(sigma),))

    def gram(self, X, Y):
        return kernels.gmm_gram(np.atleast_2d(X), np.atleast_2d(Y), self.sigmas, self.alphas)

    def gram_grad(self, X, Y, C):
        return kernels.gmm_gram_grad(np.atleast_2d(X), np.atleast_2d(Y), self.sigmas, self.alphas, C)

    def to_dict(self):
        return {"alphas": list(self.alphas), "sigmas": list(self.sigmas)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["alphas"]), tuple(d["sigmas"]))


def gmm_kernel(spec, z1, z2):
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise InvalidArgument("kernel arguments must have equal length")
    d2 = max(float(np.sum((z1 - z2) ** 2)), 0.0)
    return float(sum(a * np.exp(-d2 / (2.0 * s * s)) for a, s in zip(spec.alphas, spec.sigmas)))


def median_bandwidth(samples):
    """Median pairwise Euclidean distance; the base width of the kernel ladder."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InvalidArgument("need at least two samples")
    sigma0 = float(np.median(pdist(X)))
    if sigma0 <= 0.0:
        if np.all(X == X[0]):
            raise DegenerateError("all samples are identical")
        # more than half the pairs coincide; fall back to the mean nonzero distance
        d = pdist(X)
        sigma0 = float(d[d > 0].mean())
    return sigma0


def ridge_solve(H, h, lam):
    """Solve (H + lam I) x = h by Cholesky factorisation."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    h = np.asarray(h, dtype=np.float64)
    if H.shape[0] != H.shape[1] or H.shape[0] != h.shape[0]:
        raise InvalidArgument("H must be square and match h")
    if lam < 0:
        raise InvalidArgument("ridge weight must be nonnegative")
    A = H + lam * np.eye(H.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve(factor, h)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    t: int = 0

    @classmethod
    def for_params(cls, n, lr=1e-3, **kw):
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n), **kw)

    def to_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=d["t"],
            m=np.array(d["m"], dtype=np.float64), v=np.array(d["v"], dtype=np.float64),
        )


def adam_step(state, params, grad):
    """One bias-corrected Adam update; mutates ``state`` and returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise InvalidArgument("parameter and gradient shapes differ")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise InvalidArgument("optimizer state does not match parameter shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
