"""Posterior post-processing: GP prediction, exposure-response surfaces, PIPs, calibration."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateRegressor, DomainError, ModeError, NumericalError
from .kernel import cross_kernel

PREDICT_JITTER = 1e-8


def _kernel_args(draw, power):
    if draw.r is not None:
        return "ard", dict(r=np.asarray(draw.r, dtype=float))
    return "isotropic", dict(rho=draw.rho, power=power)


class _TrainFactor:
    """Cholesky of K_train + jitter*I for one draw's kernel parameters."""

    def __init__(self, mode, z_train, kw, jitter):
        k = cross_kernel(mode, z_train, z_train, **kw)
        k[np.diag_indices_from(k)] += jitter
        try:
            self.cf = sla.cho_factor(k, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            try:
                k[np.diag_indices_from(k)] += 1e3 * jitter
                self.cf = sla.cho_factor(k, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("training Gram factorization failed after jitter") from exc

    def solve(self, b):
        return sla.cho_solve(self.cf, b, check_finite=False)


def predict_h(draw, z_train, z_star, power=None, rng=None, return_cov=False, jitter=PREDICT_JITTER):
    """Extend a draw of h from the training sites to ``z_star``.

    Conditional on ``h_train`` the GP prior with scale tau = lambda * sigma^2
    gives mean ``K_*t K_tt^-1 h`` and covariance ``tau (K_** - K_*t K_tt^-1 K_t*)``.
    Returns the mean, a sampled vector when ``rng`` is given, or
    ``(mean, cov)`` with ``return_cov=True``.
    """
    z_train = np.atleast_2d(np.asarray(z_train, dtype=float))
    z_star = np.atleast_2d(np.asarray(z_star, dtype=float))
    if power is None:
        power = 2.0 * z_train.shape[1]
    mode, kw = _kernel_args(draw, power)
    fac = _TrainFactor(mode, z_train, kw, jitter)
    k_st = cross_kernel(mode, z_star, z_train, **kw)
    mean = k_st @ fac.solve(np.asarray(draw.h, dtype=float))
    if rng is None and not return_cov:
        return mean
    tau = draw.lam * draw.sigma2
    cov = tau * (cross_kernel(mode, z_star, z_star, **kw) - k_st @ fac.solve(k_st.T))
    cov = 0.5 * (cov + cov.T)
    if return_cov:
        return mean, cov
    evals, evecs = np.linalg.eigh(cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    return mean + root @ rng.standard_normal(mean.shape[0])


def predict_h_means(out, z_train, z_star, power=None, jitter=PREDICT_JITTER):
    """Predictive means at ``z_star`` for every retained draw of a chain, shape (N, m)."""
    res = np.empty((len(out), np.atleast_2d(z_star).shape[0]))
    for i in range(len(out)):
        res[i] = predict_h(out.draw(i), z_train, z_star, power=power, jitter=jitter)
    return res


# -- weighted summaries -------------------------------------------------------

def weighted_quantile(atoms, weights, probs):
    """Quantiles of a discrete measure along axis 0 (inverse CDF convention).

    ``atoms`` is (N,) or (N, m); returns (len(probs),) or (len(probs), m).
    """
    atoms = np.asarray(atoms, dtype=float)
    probs = np.atleast_1d(probs)
    w = np.asarray(weights, dtype=float)
    squeeze = atoms.ndim == 1
    a = atoms[:, None] if squeeze else atoms
    order = np.argsort(a, axis=0, kind="stable")
    srt = np.take_along_axis(a, order, axis=0)
    cw = np.cumsum(w[order], axis=0)
    cw /= cw[-1]
    out = np.empty((probs.size, a.shape[1]))
    for col in range(a.shape[1]):
        idx = np.searchsorted(cw[:, col], probs - 1e-12, side="left")
        out[:, col] = srt[np.minimum(idx, a.shape[0] - 1), col]
    return out[:, 0] if squeeze else out


@dataclass
class Surface:
    grid: np.ndarray           # (G,) or (G, 2) grid coordinates
    mean: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    lo50: np.ndarray
    hi50: np.ndarray
    exposures: tuple = ()
    shape: tuple = ()

    def rows(self):
        g = self.grid if self.grid.ndim == 2 else self.grid[:, None]
        for i in range(g.shape[0]):
            yield [*g[i], self.mean[i], self.lo95[i], self.hi95[i]]


def default_grid(values, n_grid=21):
    lo, hi = np.quantile(values, [0.01, 0.99])
    return np.linspace(lo, hi, n_grid)


def _summarize(h_at, z_star):
    atoms, weights = h_at(z_star)
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    mean = weights @ atoms
    qs = weighted_quantile(atoms, weights, [0.025, 0.25, 0.75, 0.975])
    return mean, qs


def surface_univariate(h_at, z_obs, j, grid=None, fix=0.5, n_grid=21):
    """Exposure-response curve for exposure j with the others at their ``fix`` quantile.

    ``h_at(z_star)`` must return ``(atoms, weights)`` with atoms of shape (N, m):
    combined posterior draws of h at the m rows of ``z_star``. Bands are pointwise.
    """
    z_obs = np.atleast_2d(np.asarray(z_obs, dtype=float))
    grid = default_grid(z_obs[:, j], n_grid) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("empty grid")
    base = np.quantile(z_obs, fix, axis=0)
    z_star = np.tile(base, (grid.size, 1))
    z_star[:, j] = grid
    mean, qs = _summarize(h_at, z_star)
    return Surface(grid=grid, mean=mean, lo95=qs[0], hi95=qs[3], lo50=qs[1], hi50=qs[2],
                   exposures=(j,), shape=(grid.size,))


def surface_bivariate(h_at, z_obs, i, j, grid=None, fix=0.5, n_grid=21):
    """Mean surface over the product grid of exposures (i, j), others fixed."""
    z_obs = np.atleast_2d(np.asarray(z_obs, dtype=float))
    if grid is None:
        gi, gj = default_grid(z_obs[:, i], n_grid), default_grid(z_obs[:, j], n_grid)
    else:
        gi, gj = (np.asarray(g, dtype=float) for g in grid)
    if gi.size == 0 or gj.size == 0:
        raise DomainError("empty grid")
    base = np.quantile(z_obs, fix, axis=0)
    ii, jj = np.meshgrid(gi, gj, indexing="ij")
    z_star = np.tile(base, (ii.size, 1))
    z_star[:, i] = ii.ravel()
    z_star[:, j] = jj.ravel()
    mean, qs = _summarize(h_at, z_star)
    return Surface(grid=np.column_stack([ii.ravel(), jj.ravel()]), mean=mean,
                   lo95=qs[0], hi95=qs[3], lo50=qs[1], hi50=qs[2],
                   exposures=(i, j), shape=(gi.size, gj.size))


def write_surface(surface: Surface, path, names=None):
    names = names or [f"z{e + 1}" for e in surface.exposures]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "mean", "lo95", "hi95"])
        for row in surface.rows():
            w.writerow([repr(float(v)) for v in row])


def inclusion_probabilities(source, weights=None):
    """Weighted frequency of eta_j = 1.

    ``source`` is either an (N, q) array of indicators or a mapping of
    combined posteriors holding ``eta_1 .. eta_q``.
    """
    if source is None:
        raise ModeError("inclusion probabilities need ARD (spike-and-slab) draws")
    if isinstance(source, Mapping):
        keys = sorted((k for k in source if k.startswith("eta_")), key=lambda k: int(k[4:]))
        if not keys:
            raise ModeError("no eta functionals: the fit used the isotropic kernel")
        return np.array([source[k].mean() for k in keys])
    eta = np.atleast_2d(np.asarray(source, dtype=float))
    w = np.full(eta.shape[0], 1.0 / eta.shape[0]) if weights is None else np.asarray(weights, float)
    return (w / w.sum()) @ eta


def calibration_regression(h_true, h_hat):
    """OLS of the true surface on the estimate: h_true = g0 + g1 * h_hat. Returns (g0, g1, R^2)."""
    h_true = np.asarray(h_true, dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    if h_true.shape != h_hat.shape or h_true.size < 3:
        raise DomainError("need two equal-length vectors with at least 3 entries")
    xc = h_hat - h_hat.mean()
    sxx = xc @ xc
    if not sxx > 1e-14 * max(1.0, (h_hat ** 2).sum()):
        raise DegenerateRegressor("estimated surface has zero variance")
    yc = h_true - h_true.mean()
    g1 = (xc @ yc) / sxx
    g0 = h_true.mean() - g1 * h_hat.mean()
    resid = yc - g1 * xc
    syy = yc @ yc
    r2 = 1.0 - (resid @ resid) / syy if syy > 0 else 1.0
    return float(g0), float(g1), float(min(max(r2, 0.0), 1.0))
