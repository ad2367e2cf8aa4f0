"""Latent alignment losses: warm-up MMD, stabilised weights, weighted MMD and
the trust-region encoder objective, each with an exact parameter gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgument
from .numcore import MLP


@dataclass
class AlignConfig:
    lambda_mmd0: float = 1.0
    lambda_reg: float = 1e-5
    lambda_mmd: float = 1.0
    beta: float = 1.0
    eps_w: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_mmd0, self.lambda_reg, self.lambda_mmd, self.beta) < 0:
            raise InvalidArgument("alignment coefficients must be nonnegative")
        if not self.eps_w > 0:
            raise InvalidArgument("eps_w must be positive")


def _nonempty(*arrs):
    for a in arrs:
        if np.asarray(a).shape[0] == 0:
            raise InvalidArgument("latent sets must be non-empty")


def mmd_unweighted(sim_latents, real_latents, kernel):
    Zs = np.atleast_2d(sim_latents)
    Zr = np.atleast_2d(real_latents)
    _nonempty(Zs, Zr)
    return float(kernel.gram(Zs, Zs).mean() - 2.0 * kernel.gram(Zs, Zr).mean()
                 + kernel.gram(Zr, Zr).mean())


def mmd_weighted(sim_latents, weights, real_latents, kernel):
    Zs = np.atleast_2d(sim_latents)
    Zr = np.atleast_2d(real_latents)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (Zs.shape[0],):
        raise InvalidArgument("one weight per simulator latent is required")
    _nonempty(Zs, Zr)
    nr = Zr.shape[0]
    return float(w @ kernel.gram(Zs, Zs) @ w
                 - 2.0 / nr * (w @ kernel.gram(Zs, Zr)).sum()
                 + kernel.gram(Zr, Zr).mean())


def _mmd_latent_grads(Zs, Zr, w, kernel):
    """d MMD / d Zs and d MMD / d Zr for sim weights w (1/n_s gives the
    unweighted statistic)."""
    nr = Zr.shape[0]
    ws = np.outer(w, w)
    sr = np.broadcast_to(w[:, None] / nr, (Zs.shape[0], nr))
    gs = 2.0 * kernel.gram_grad(Zs, Zs, ws) - 2.0 * kernel.gram_grad(Zs, Zr, sr)
    gr = (2.0 / nr**2) * kernel.gram_grad(Zr, Zr, np.ones((nr, nr))) \
        - 2.0 * kernel.gram_grad(Zr, Zs, sr.T)
    return gs, gr


def _encoder_mmd(encoder, Xs, Xr, w, kernel):
    Zs, acts_s = encoder.forward(Xs, keep=True)
    Zr, acts_r = encoder.forward(Xr, keep=True)
    _nonempty(Zs, Zr)
    val = mmd_weighted(Zs, w, Zr, kernel)
    gs, gr = _mmd_latent_grads(Zs, Zr, w, kernel)
    return val, encoder.backward(acts_s, gs) + encoder.backward(acts_r, gr)


def warmup_loss(encoder, sim_batch, real_batch, cfg, kernel):
    """lambda0 * MMD0 + lambda_reg * |theta|^2 and its gradient."""
    Xs = np.atleast_2d(sim_batch)
    theta = encoder.flat()
    w = np.full(Xs.shape[0], 1.0 / max(Xs.shape[0], 1))
    mmd, g = _encoder_mmd(encoder, Xs, np.atleast_2d(real_batch), w, kernel)
    loss = cfg.lambda_mmd0 * mmd + cfg.lambda_reg * float(theta @ theta)
    return loss, cfg.lambda_mmd0 * g + 2.0 * cfg.lambda_reg * theta


def stabilized_weights(sim_batch_states, anchor_encoder, ratio, eps_w=1e-8):
    """iota(Omega_0(x_u)) / max(sum_s iota(Omega_0(x_s)), eps_w)."""
    r = np.atleast_1d(ratio(anchor_encoder(np.atleast_2d(sim_batch_states))))
    return r / max(float(r.sum()), eps_w)


def stage2_loss(encoder, anchor, sim_batch, real_batch, weights, cfg, kernel, beta=None):
    """lambda_mmd * weighted MMD under the current encoder + beta |theta - theta0|^2.

    ``weights`` are constants here: no gradient flows through them.
    """
    beta = cfg.beta if beta is None else beta
    theta = encoder.flat()
    theta0 = anchor.flat() if isinstance(anchor, MLP) else np.asarray(anchor, dtype=np.float64)
    if theta0.shape != theta.shape:
        raise InvalidArgument("anchor and encoder shapes differ")
    w = np.asarray(weights, dtype=np.float64)
    mmd, g = _encoder_mmd(encoder, np.atleast_2d(sim_batch), np.atleast_2d(real_batch), w, kernel)
    d = theta - theta0
    return cfg.lambda_mmd * mmd + beta * float(d @ d), cfg.lambda_mmd * g + 2.0 * beta * d


def stage2_argmin(encoder, anchor, sim_batch, real_batch, weights, cfg, kernel,
                  beta=None, max_iter=500, tol=1e-10):
    """Minimise the stage-2 objective from the anchor with L-BFGS; returns the
    optimised encoder (the input encoder is not modified)."""
    enc = encoder.copy()
    theta0 = anchor.flat() if isinstance(anchor, MLP) else np.asarray(anchor, dtype=np.float64)

    def fun(v):
        enc.set_flat(v)
        return stage2_loss(enc, theta0, sim_batch, real_batch, weights, cfg, kernel, beta)

    res = minimize(fun, theta0.copy(), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15})
    enc.set_flat(res.x)
    return enc


def encoder_drift(encoder, anchor, states):
    """Mean latent displacement |Omega(x) - Omega_0(x)| over ``states``."""
    X = np.atleast_2d(states)
    return float(np.linalg.norm(encoder(X) - anchor(X), axis=1).mean())
