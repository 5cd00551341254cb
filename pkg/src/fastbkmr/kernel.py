"""Gram matrices for the squared-exponential kernels and the V-matrix algebra.

Every consumer of ``V = I + lambda*K`` goes through :class:`VFactor`, which
holds a Cholesky factor and exposes solves, log-determinants and quadratic
forms. No explicit inverse is formed outside :func:`VFactor.inverse`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .errors import DomainError, NumericalError

DEFAULT_JITTER = 1e-8

_potrf, _potrs, _trtrs = sla.get_lapack_funcs(("potrf", "potrs", "trtrs"), dtype=np.float64)


@dataclass(frozen=True)
class GramMatrix:
    m: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.m.shape[0]


def sq_dists(a, b=None):
    """Pairwise squared Euclidean distances between rows."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    d = cdist(a, b, "sqeuclidean")
    if b is a:
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
    return d


def coordinate_sq_dists(a, b=None):
    """Per-coordinate squared differences, shape (q, n_a, n_b)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    return (a.T[:, :, None] - b.T[:, None, :]) ** 2


def _add_jitter(k, jitter):
    if jitter:
        k = k.copy()
        k[np.diag_indices_from(k)] += jitter
    return k


def isotropic_from_dists(d2, rho, power):
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho!r}")
    return np.exp(-d2 / rho ** power)


def ard_from_dists(d2q, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("ARD scales r_j must be nonnegative")
    active = np.flatnonzero(r)
    if active.size == 0:
        return np.ones(d2q.shape[1:])
    return np.exp(-np.tensordot(r[active], d2q[active], axes=1))


def gram_isotropic(z, rho, q=None, jitter=0.0, power=None):
    """K_ij = exp(-||z_i - z_j||^2 / rho^power) with power = 2q by default."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    q = z.shape[1] if q is None else q
    power = 2.0 * q if power is None else power
    k = isotropic_from_dists(sq_dists(z), rho, power)
    return GramMatrix(_add_jitter(k, jitter), jitter)


def gram_ard(z, r, jitter=0.0):
    """K_ij = exp(-sum_l r_l (z_il - z_jl)^2)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    r = np.asarray(r, dtype=float)
    if r.shape != (z.shape[1],):
        raise DomainError(f"r must have length {z.shape[1]}")
    k = ard_from_dists(coordinate_sq_dists(z), r)
    return GramMatrix(_add_jitter(k, jitter), jitter)


def cross_kernel(mode, a, b, rho=None, r=None, power=None):
    """Rectangular kernel block between row sets ``a`` and ``b`` (no jitter)."""
    if mode == "isotropic":
        q = np.atleast_2d(a).shape[1]
        return isotropic_from_dists(sq_dists(a, b), rho, 2.0 * q if power is None else power)
    return ard_from_dists(coordinate_sq_dists(a, b), r)


class VFactor:
    """Cholesky factorization of ``scale * (I + lam * K)``.

    ``scale`` is 1 for full-data fits and K (the number of splits) for the
    sketched subset model, where the noise covariance is ``sigma^2 * K * I``.
    """

    def __init__(self, k, lam, scale=1.0):
        if not lam > 0:
            raise DomainError(f"lambda must be positive, got {lam!r}")
        km = k.m if isinstance(k, GramMatrix) else np.asarray(k)
        self.k = km
        self.lam = float(lam)
        self.scale = float(scale)
        self.n = km.shape[0]
        a = self.lam * km
        a.flat[:: self.n + 1] += 1.0
        # raw LAPACK: these factors are built and solved thousands of times per chain
        chol, info = _potrf(a, lower=1, clean=0, overwrite_a=1)
        diag = chol.diagonal()
        if info != 0 or not np.all(np.isfinite(diag)):
            raise NumericalError(
                f"Cholesky of I + lambda*K failed (n={self.n}, lambda={self.lam:.4g})"
            )
        self._l = chol
        self._logdet_unit = 2.0 * np.log(diag).sum()

    def solve(self, b):
        x, info = _potrs(self._l, b, lower=1)
        if info != 0:
            raise NumericalError("triangular solve with the V factor failed")
        return x / self.scale

    def quad(self, b):
        """b' V^{-1} b."""
        w, info = _trtrs(self._l, b, lower=1)
        if info != 0:
            raise NumericalError("triangular solve with the V factor failed")
        return float(w @ w) / self.scale

    @property
    def logdet(self):
        return self.n * np.log(self.scale) + self._logdet_unit

    def matrix(self):
        a = self.scale * self.lam * self.k
        a.flat[:: self.n + 1] += self.scale
        return a

    def inverse(self):
        return self.solve(np.eye(self.n))


def v_matrix(k, lam):
    """Factorized ``I + lam*K``."""
    return VFactor(k, lam, 1.0)


def robust_cholesky(c, jitter=1e-10, max_tries=8, what="matrix"):
    """Lower Cholesky factor of a symmetric PSD matrix with escalating jitter.

    Jitter is relative to the mean diagonal so that rescaled inputs escalate
    identically.
    """
    c = 0.5 * (c + c.T)
    scale = float(np.mean(np.diag(c))) if c.size else 1.0
    if not scale > 0:
        scale = 1.0
    eps = 0.0
    for attempt in range(max_tries + 1):
        try:
            if eps:
                cj = c.copy()
                cj[np.diag_indices_from(cj)] += eps * scale
            else:
                cj = c
            return np.linalg.cholesky(cj)
        except np.linalg.LinAlgError:
            eps = jitter if attempt == 0 else eps * 10.0
    raise NumericalError(f"Cholesky of {what} failed after jitter escalation to {eps:.1e}")
