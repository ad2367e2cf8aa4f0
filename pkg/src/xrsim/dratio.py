"""Kernel density-ratio estimation in latent space (uLSIF and KLIEP).

The ratio model is iota(z) = sum_m xi_m k(z, c_m) with Gaussian basis
functions centred on real-domain latents.  uLSIF solves a ridge system in
closed form; KLIEP maximises the real-sample log-likelihood with a
quadratic penalty on the unit-mean constraint over simulator samples, by
spectral projected gradient onto xi >= 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, InvalidArgument
from .numcore import KernelSpec, median_bandwidth, ridge_solve

log = logging.getLogger(__name__)


@dataclass
class RatioFitConfig:
    method: str = "ulsif"
    n_centers: int = 100
    lambda_iota: float = 1e-3
    varsigma: float = 100.0
    max_iters: int = 2000
    tol: float = 1e-6
    step_size: float = 1.0
    seed: int = 0
    sigma: float | None = None
    auto_lambda: bool = False

    def __post_init__(self):
        if self.method not in ("ulsif", "kliep"):
            raise InvalidArgument(f"unknown ratio method {self.method!r}")
        if self.lambda_iota < 0 or not self.varsigma > 0 or self.n_centers < 1:
            raise InvalidArgument("need lambda_iota >= 0, varsigma > 0, n_centers >= 1")


@dataclass
class RatioModel:
    centers: np.ndarray
    xi: np.ndarray
    kernel: KernelSpec
    clip_nonneg: bool = True
    method: str = "ulsif"
    converged: bool = True
    n_iter: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.xi = np.asarray(self.xi, dtype=np.float64)
        if self.xi.shape != (self.centers.shape[0],) or self.xi.size < 1:
            raise InvalidArgument("xi must have one coefficient per center")
        if not (np.all(np.isfinite(self.xi)) and np.all(np.isfinite(self.centers))):
            raise InvalidArgument("ratio model has non-finite parameters")

    def features(self, Z):
        return self.kernel.gram(np.atleast_2d(Z), self.centers)

    def raw(self, Z):
        return self.features(Z) @ self.xi

    def __call__(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        single = Z.ndim == 1
        r = self.raw(Z[None, :] if single else Z)
        if self.clip_nonneg:
            r = np.maximum(r, 0.0)
        return float(r[0]) if single else r

    def to_dict(self):
        return {
            "centers": self.centers.tolist(),
            "xi": self.xi.tolist(),
            "kernel": self.kernel.to_dict(),
            "clip_nonneg": self.clip_nonneg,
            "method": self.method,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["centers"], dtype=np.float64),
            np.array(d["xi"], dtype=np.float64),
            KernelSpec.from_dict(d["kernel"]),
            d["clip_nonneg"], d["method"], d["converged"], d["n_iter"],
        )


def evaluate_ratio(model, z):
    return model(z)


def select_centers(real_latents, M, seed):
    """Seeded subsample of M real-domain latents without replacement."""
    Z = np.atleast_2d(np.asarray(real_latents, dtype=np.float64))
    if Z.shape[0] == 1 and np.asarray(real_latents).ndim == 1:
        Z = Z.T
    if M > Z.shape[0] or M < 1:
        raise InvalidArgument(f"cannot pick {M} centers from {Z.shape[0]} samples")
    idx = np.random.default_rng(seed).choice(Z.shape[0], size=M, replace=False)
    return Z[idx].copy()


def _as_2d(Z):
    Z = np.asarray(Z, dtype=np.float64)
    return Z[:, None] if Z.ndim == 1 else Z


def _kernel_for(cfg, Zs, Zr):
    if cfg.sigma is not None:
        return KernelSpec.single(cfg.sigma)
    return KernelSpec.single(median_bandwidth(np.vstack([Zs, Zr])))


def _ulsif_xi(Phi_s, Phi_r, lam):
    H = Phi_s.T @ Phi_s / Phi_s.shape[0]
    h = Phi_r.mean(axis=0)
    return ridge_solve(H, h, lam), H, h


def _ulsif_score(xi, Phi_s, Phi_r):
    # held-out least-squares criterion: 1/2 E_s[r^2] - E_r[r]
    return 0.5 * np.mean((Phi_s @ xi) ** 2) - np.mean(Phi_r @ xi)


def fit_ulsif(sim_latents, real_latents, cfg=None):
    cfg = cfg or RatioFitConfig()
    Zs, Zr = _as_2d(sim_latents), _as_2d(real_latents)
    if Zs.shape[0] == 0 or Zr.shape[0] == 0:
        raise InvalidArgument("both latent sets must be non-empty")
    kernel = _kernel_for(cfg, Zs, Zr)
    centers = select_centers(Zr, min(cfg.n_centers, Zr.shape[0]), cfg.seed)
    Phi_s = kernel.gram(Zs, centers)
    Phi_r = kernel.gram(Zr, centers)
    lam = cfg.lambda_iota
    if cfg.auto_lambda:
        lam = _select_lambda(Phi_s, Phi_r, cfg.seed)
    xi, H, h = _ulsif_xi(Phi_s, Phi_r, lam)
    resid = np.linalg.norm((H + lam * np.eye(H.shape[0])) @ xi - h)
    return RatioModel(centers, xi, kernel, True, "ulsif", True, 0,
                      {"lambda_iota": lam, "residual": float(resid)})


def _select_lambda(Phi_s, Phi_r, seed, grid=(1e-4, 1e-3, 1e-2, 1e-1, 1.0)):
    """Two-fold split score; returns the lambda with the lowest held-out loss."""
    rng = np.random.default_rng([seed, 2])
    ps = rng.permutation(Phi_s.shape[0])
    pr = rng.permutation(Phi_r.shape[0])
    s_half = np.array_split(ps, 2)
    r_half = np.array_split(pr, 2)
    best, best_score = grid[0], np.inf
    for lam in grid:
        score = 0.0
        for a, b in ((0, 1), (1, 0)):
            xi, _, _ = _ulsif_xi(Phi_s[s_half[a]], Phi_r[r_half[a]], lam)
            score += _ulsif_score(xi, Phi_s[s_half[b]], Phi_r[r_half[b]])
        if score < best_score:
            best, best_score = lam, score
    return best


def kliep_objective(xi, Phi_s, Phi_r, varsigma, lam):
    """Penalised negative log-likelihood; +inf where some real sample has
    non-positive modelled ratio."""
    r = Phi_r @ xi
    if np.any(r <= 0):
        return np.inf
    gap = np.mean(Phi_s @ xi) - 1.0
    return -np.mean(np.log(r)) + varsigma * gap * gap + 0.5 * lam * float(xi @ xi)


def kliep_gradient(xi, Phi_s, Phi_r, varsigma, lam):
    r = Phi_r @ xi
    mean_phi_s = Phi_s.mean(axis=0)
    gap = float(mean_phi_s @ xi) - 1.0
    return -(Phi_r / r[:, None]).mean(axis=0) + 2.0 * varsigma * gap * mean_phi_s + lam * xi


def project_nonneg(xi):
    return np.maximum(xi, 0.0)


def fit_kliep(sim_latents, real_latents, cfg=None):
    cfg = cfg or RatioFitConfig(method="kliep")
    Zs, Zr = _as_2d(sim_latents), _as_2d(real_latents)
    if Zs.shape[0] == 0 or Zr.shape[0] == 0:
        raise InvalidArgument("both latent sets must be non-empty")
    kernel = _kernel_for(cfg, Zs, Zr)
    centers = select_centers(Zr, min(cfg.n_centers, Zr.shape[0]), cfg.seed)
    Phi_s = kernel.gram(Zs, centers)
    Phi_r = kernel.gram(Zr, centers)
    xi, n_iter, converged, f = _spg(Phi_s, Phi_r, cfg)
    mean_sim = float(np.mean(Phi_s @ xi))
    if not converged:
        log.info("KLIEP stopped after %d iterations without meeting tol=%g", n_iter, cfg.tol)
    return RatioModel(centers, xi, kernel, True, "kliep", converged, n_iter,
                      {"objective": f, "mean_sim_ratio": mean_sim})


def _spg(Phi_s, Phi_r, cfg, memory=10):
    """Spectral projected gradient with the nonmonotone (max over the last
    ``memory`` values) Armijo rule; returns (xi, iters, converged, f)."""
    args = (Phi_s, Phi_r, cfg.varsigma, cfg.lambda_iota)
    M = Phi_s.shape[1]
    # strictly positive start with unit mean over the simulator samples
    xi = np.full(M, 1.0 / max(np.mean(Phi_s.sum(axis=1)), 1e-300))
    f = kliep_objective(xi, *args)
    g = kliep_gradient(xi, *args)
    step = cfg.step_size
    hist = [f]
    best_f, best_xi = f, xi.copy()
    for it in range(cfg.max_iters):
        if np.linalg.norm(xi - project_nonneg(xi - g)) <= cfg.tol:
            return xi, it, True, f
        d = project_nonneg(xi - step * g) - xi
        gd = float(g @ d)
        f_ref = max(hist[-memory:])
        alpha = 1.0
        while True:
            cand = xi + alpha * d
            fc = kliep_objective(cand, *args)
            if np.isfinite(fc) and fc <= f_ref + 1e-4 * alpha * gd:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                return best_xi, it, False, best_f
        s = cand - xi
        g_new = kliep_gradient(cand, *args)
        sy = float(s @ (g_new - g))
        # Barzilai-Borwein step for the next iteration
        step = float(s @ s) / sy if sy > 0 else 1e10
        step = min(max(step, 1e-10), 1e10)
        xi, f, g = cand, fc, g_new
        hist.append(f)
        if f < best_f:
            best_f, best_xi = f, xi.copy()
    conv = bool(np.linalg.norm(best_xi - project_nonneg(best_xi - kliep_gradient(best_xi, *args))) <= cfg.tol)
    return best_xi, cfg.max_iters, conv, best_f


def fit_ratio(sim_latents, real_latents, cfg):
    if cfg.method == "ulsif":
        return fit_ulsif(sim_latents, real_latents, cfg)
    return fit_kliep(sim_latents, real_latents, cfg)


def normalize_weights(raw):
    """Rescale nonnegative weights to unit mean."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise InvalidArgument("empty weight batch")
    if np.any(raw < 0):
        raise InvalidArgument("weights must be nonnegative")
    m = raw.mean()
    if not m > 0:
        raise DegenerateError("all weights are zero")
    return raw / m


def effective_sample_size(weights):
    """(sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or np.any(w < 0):
        raise InvalidArgument("weights must be a non-empty nonnegative vector")
    m = w.max()
    if not m > 0:
        raise InvalidArgument("all weights are zero")
    w = w / m  # scale-free; avoids underflow of the squares
    s = w.sum()
    return float(s * s / np.dot(w, w))
