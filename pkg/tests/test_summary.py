import numpy as np
import pytest

from fastbkmr.data import ModelConfig, PosteriorDraw
from fastbkmr.errors import DegenerateRegressor, DomainError, ModeError
from fastbkmr.kernel import cross_kernel
from fastbkmr.sampler import run_chain
from fastbkmr.simulation import true_h
from fastbkmr.summary import (calibration_regression, inclusion_probabilities, predict_h,
                              surface_bivariate, surface_univariate, weighted_quantile,
                              write_surface)

from conftest import make_dataset


def _draw(h, rho=1.2, lam=2.0, sigma2=0.5):
    return PosteriorDraw(beta=np.zeros(1), sigma2=sigma2, lam=lam, h=np.asarray(h), rho=rho)


def test_predict_interpolates_training_site():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((15, 2))
    h = rng.standard_normal(15)
    mean = predict_h(_draw(h, rho=0.9), z, z[[3, 7]])
    np.testing.assert_allclose(mean, h[[3, 7]], atol=1e-6)


def test_predict_prior_reversion_far_away():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((10, 2))
    d = _draw(rng.standard_normal(10), lam=3.0, sigma2=0.4)
    mean, cov = predict_h(d, z, np.array([[100.0, 100.0]]), return_cov=True)
    assert abs(mean[0]) < 1e-12
    assert cov[0, 0] == pytest.approx(1.2)


def test_predict_dense_oracle():
    rng = np.random.default_rng(2)
    zt, zs = rng.standard_normal((20, 2)), rng.standard_normal((5, 2))
    d = _draw(rng.standard_normal(20), rho=1.1)
    kernel = lambda a, b: np.exp(-((a[:, None] - b[None]) ** 2).sum(-1) / 1.1 ** 4)
    ktt = kernel(zt, zt) + 1e-8 * np.eye(20)
    expect = kernel(zs, zt) @ np.linalg.inv(ktt) @ d.h
    np.testing.assert_allclose(predict_h(d, zt, zs), expect, atol=1e-8)
    cov_expect = 1.0 * (kernel(zs, zs) - kernel(zs, zt) @ np.linalg.inv(ktt) @ kernel(zt, zs))
    _, cov = predict_h(d, zt, zs, return_cov=True)
    np.testing.assert_allclose(cov, cov_expect, atol=1e-6)
    sample = predict_h(d, zt, zs, rng=np.random.default_rng(0))
    assert sample.shape == (5,)


def test_predict_ard():
    rng = np.random.default_rng(3)
    zt, zs = rng.standard_normal((12, 3)), rng.standard_normal((4, 3))
    d = PosteriorDraw(beta=np.zeros(1), sigma2=1.0, lam=1.0, h=rng.standard_normal(12),
                      r=np.array([0.5, 0.0, 2.0]), eta=np.array([1, 0, 1]))
    k = cross_kernel("ard", zt, zt, r=d.r) + 1e-8 * np.eye(12)
    expect = cross_kernel("ard", zs, zt, r=d.r) @ np.linalg.solve(k, d.h)
    np.testing.assert_allclose(predict_h(d, zt, zs), expect, atol=1e-8)


def test_weighted_quantile_inverse_cdf():
    atoms = np.array([3.0, 1.0, 2.0])
    w = np.array([0.2, 0.5, 0.3])
    np.testing.assert_array_equal(weighted_quantile(atoms, w, [0.1, 0.5, 0.6, 0.8, 0.81]),
                                  [1.0, 1.0, 2.0, 2.0, 3.0])


def _zeros(z_star):
    return np.zeros((50, len(z_star))), np.full(50, 1 / 50)


def _truth(z_star):
    return true_h(z_star)[None, :], np.ones(1)


def _z(n=400, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 4))


def test_flat_surface_for_zero_draws():
    s = surface_univariate(_zeros, _z(), 0)
    assert s.grid.size == 21
    for arr in (s.mean, s.lo95, s.hi95, s.lo50, s.hi50):
        np.testing.assert_array_equal(arr, 0.0)
    b = surface_bivariate(_zeros, _z(), 0, 1, n_grid=5)
    assert b.shape == (5, 5) and np.all(b.mean == 0)


def test_truth_curve():
    z = _z()
    s = surface_univariate(_truth, z, 0, grid=np.array([0.0]))
    assert s.mean[0] == pytest.approx(2.0, abs=0.1)
    s = surface_univariate(_truth, z, 0)
    assert np.all(np.diff(s.mean) >= 0)
    fixed = np.median(z, axis=0)
    zz = np.tile(fixed, (21, 1))
    zz[:, 0] = s.grid
    np.testing.assert_allclose(s.mean, true_h(zz))


def test_truth_bivariate():
    z = _z()
    b = surface_bivariate(_truth, z, 0, 1, grid=(np.array([0.0]), np.array([0.0])))
    assert b.mean[0] == pytest.approx(2.0, abs=0.1)
    g = np.linspace(-2, 2, 9)
    b = surface_bivariate(_truth, z, 0, 1, grid=(g, g))
    m = b.mean.reshape(9, 9)
    np.testing.assert_allclose(m, m.T, atol=0.15)


def test_fix_default_equals_half():
    z = _z()
    a = surface_univariate(_truth, z, 1)
    b = surface_univariate(_truth, z, 1, fix=0.5)
    np.testing.assert_array_equal(a.mean, b.mean)


def test_surface_errors_and_file(tmp_path):
    with pytest.raises(DomainError):
        surface_univariate(_truth, _z(), 0, grid=np.array([]))
    s = surface_univariate(_truth, _z(), 0, n_grid=4)
    write_surface(s, tmp_path / "s.csv", ["z1"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "z1,mean,lo95,hi95" and len(lines) == 5


def test_inclusion_probabilities():
    assert np.all(inclusion_probabilities(np.ones((10, 3))) == 1.0)
    eta = np.array([[1, 0], [0, 0], [1, 1], [1, 0]])
    np.testing.assert_allclose(inclusion_probabilities(eta), [0.75, 0.25])
    np.testing.assert_allclose(inclusion_probabilities(eta, np.array([0.1, 0.1, 0.1, 0.7])), [0.9, 0.1])
    ds = make_dataset(n=30, q=2)
    out = run_chain(ds, ModelConfig(kernel_mode="ard", pi=(0.0, 0.5), iters=40, burnin=10, thin=1), seed=1)
    assert inclusion_probabilities(out.eta)[0] == 0.0
    with pytest.raises(ModeError):
        inclusion_probabilities({"beta_1": None, "rho": None})
    with pytest.raises(ModeError):
        inclusion_probabilities(None)


def test_calibration_examples():
    h = np.random.default_rng(4).standard_normal(50)
    np.testing.assert_allclose(calibration_regression(h, h), (0.0, 1.0, 1.0), atol=1e-12)
    np.testing.assert_allclose(calibration_regression(h, 2 * h + 3), (-1.5, 0.5, 1.0), atol=1e-12)
    with pytest.raises(DegenerateRegressor):
        calibration_regression(h, np.full(50, 2.0))


def test_calibration_normal_equations():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        x = np.column_stack([np.ones(30), b])
        coef = np.linalg.solve(x.T @ x, x.T @ a)
        resid = a - x @ coef
        r2 = 1 - resid @ resid / np.sum((a - a.mean()) ** 2)
        np.testing.assert_allclose(calibration_regression(a, b), (*coef, r2), atol=1e-10)
