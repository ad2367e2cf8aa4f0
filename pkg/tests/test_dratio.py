import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import fd_grad, rel_err
from xrsim.dratio import (
    RatioFitConfig, RatioModel, effective_sample_size, evaluate_ratio, fit_kliep,
    fit_ulsif, kliep_gradient, kliep_objective, normalize_weights, project_nonneg,
    select_centers,
)
from xrsim.errors import DegenerateError, InvalidArgument
from xrsim.numcore import KernelSpec


def gaussian_shift(seed=0, n=2000):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n), rng.standard_normal(n) + 0.5


def test_select_centers(rng):
    Z = rng.standard_normal((10, 2))
    C = select_centers(Z, 10, 0)
    assert sorted(map(tuple, C)) == sorted(map(tuple, Z))
    assert np.array_equal(select_centers(Z, 4, 3), select_centers(Z, 4, 3))
    big = rng.standard_normal((1000, 3))
    src = set(map(tuple, big))
    assert all(tuple(c) in src for c in select_centers(big, 64, 1))
    with pytest.raises(InvalidArgument):
        select_centers(Z, 11, 0)


def test_ulsif_constant_feature():
    cfg = RatioFitConfig(n_centers=1, lambda_iota=0.3, sigma=1e8)
    m = fit_ulsif(np.zeros(5), np.zeros(4), cfg)
    assert m.xi[0] == pytest.approx(1 / 1.3, rel=1e-12)


def test_ulsif_identical_sets_mean_near_one(rng):
    Z = rng.standard_normal((2000, 2))
    for fit in (fit_ulsif, fit_kliep):
        cfg = RatioFitConfig(method="kliep" if fit is fit_kliep else "ulsif", n_centers=32, lambda_iota=1e-3)
        m = fit(Z, Z, cfg)
        assert 0.8 <= float(np.mean(m(Z))) <= 1.25


def test_ulsif_normal_equations():
    zs, zr = gaussian_shift(1, 500)
    m = fit_ulsif(zs, zr, RatioFitConfig(n_centers=20))
    Phi_s, Phi_r = m.features(zs[:, None]), m.features(zr[:, None])
    H, h = Phi_s.T @ Phi_s / zs.size, Phi_r.mean(axis=0)
    assert np.linalg.norm((H + 1e-3 * np.eye(20)) @ m.xi - h) <= 1e-8 * np.linalg.norm(h)


def test_ulsif_gaussian_shift():
    zs, zr = gaussian_shift()
    m = fit_ulsif(zs, zr, RatioFitConfig(n_centers=50))
    grid = np.linspace(-3, 3, 101)
    assert np.corrcoef(m(grid[:, None]), np.exp(0.5 * grid - 0.125))[0, 1] >= 0.95


def test_kliep_gaussian_shift_and_constraint():
    zs, zr = gaussian_shift()
    m = fit_kliep(zs, zr, RatioFitConfig(method="kliep", n_centers=50))
    grid = np.linspace(-3, 3, 101)
    assert np.corrcoef(m(grid[:, None]), np.exp(0.5 * grid - 0.125))[0, 1] >= 0.9
    assert abs(float(np.mean(m(zs[:, None]))) - 1.0) <= 0.05
    assert np.all(m.xi >= 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_kliep_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    Phi_s = rng.uniform(0.05, 1, (30, 6))
    Phi_r = rng.uniform(0.05, 1, (20, 6))
    xi = rng.uniform(0.1, 1.0, 6)
    g = kliep_gradient(xi, Phi_s, Phi_r, 100.0, 1e-3)
    fd = fd_grad(lambda x: kliep_objective(x, Phi_s, Phi_r, 100.0, 1e-3), xi, h=1e-6)
    assert rel_err(g, fd) < 1e-4


def test_projection():
    assert np.array_equal(project_nonneg(np.array([0.5, -0.2, 0.0])), [0.5, 0.0, 0.0])


def test_evaluate_ratio_oracles():
    k = KernelSpec.single(1.0)
    zero = RatioModel(np.array([[0.0], [1.0]]), np.zeros(2), k)
    assert evaluate_ratio(zero, np.array([0.3])) == 0.0
    neg = RatioModel(np.array([[0.0], [2.0]]), np.array([1.0, -5.0]), k)
    assert evaluate_ratio(neg, np.array([2.0])) == 0.0
    hand = RatioModel(np.array([[0.0], [2.0]]), np.array([0.5, 1.5]), KernelSpec.single(2.0))
    z = 1.0
    ref = 0.5 * math.exp(-1 / 8) + 1.5 * math.exp(-1 / 8)
    assert evaluate_ratio(hand, np.array([z])) == pytest.approx(ref, rel=1e-14)


def test_model_round_trip():
    zs, zr = gaussian_shift(2, 200)
    m = fit_ulsif(zs, zr, RatioFitConfig(n_centers=10))
    back = RatioModel.from_dict(m.to_dict())
    assert np.array_equal(back(zs[:, None]), m(zs[:, None]))


def test_normalize_weights():
    assert np.array_equal(normalize_weights(np.full(4, 0.3)), np.ones(4))
    assert np.allclose(normalize_weights([2, 1, 1]), [1.5, 0.75, 0.75], rtol=0, atol=1e-15)
    r = np.array([0.2, 3.0, 1.1])
    assert np.allclose(normalize_weights(7.5 * r), normalize_weights(r), rtol=1e-14)
    with pytest.raises(DegenerateError):
        normalize_weights(np.zeros(3))


def test_n_eff_hand_values():
    assert effective_sample_size(np.ones(16)) == pytest.approx(16.0, rel=1e-15)
    assert effective_sample_size([0, 0, 4.0, 0]) == 1.0
    assert effective_sample_size([2, 1, 1]) == pytest.approx(16 / 6, rel=1e-15)
    with pytest.raises(InvalidArgument):
        effective_sample_size(np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50).filter(lambda w: sum(w) > 0))
def test_n_eff_bounds(w):
    n = effective_sample_size(w)
    assert 1 - 1e-12 <= n <= len(w) * (1 + 1e-12)
