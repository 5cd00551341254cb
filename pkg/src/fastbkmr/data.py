"""Data containers, model configuration and CSV ingestion."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, fields, replace
from typing import Mapping

import numpy as np

from .errors import DataError, DegenerateColumn, DomainError, MissingColumn


class MissingDataWarning(UserWarning):
    """Emitted when rows are dropped under ``policy="drop"``."""

    def __init__(self, count):
        super().__init__(f"dropped {count} row(s) with missing or non-numeric cells")
        self.count = count


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y`` (n,), confounders ``x`` (n, p) and exposures ``z`` (n, q)."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()
    y_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((n, 0))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if n < 1:
            raise DataError("dataset needs at least one row")
        if x.shape[0] != n or z.shape[0] != n:
            raise DataError(f"row counts differ: y={n}, x={x.shape[0]}, z={z.shape[0]}")
        if z.shape[1] < 1:
            raise DataError("at least one exposure column is required")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        for arr in (y, x, z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(x.shape[1])))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{j + 1}" for j in range(z.shape[1])))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.z.shape[1]

    def take(self, index):
        """Row subset (used for plain, unscaled subsets)."""
        index = np.asarray(index)
        return replace(self, y=self.y[index], x=self.x[index], z=self.z[index])


@dataclass(frozen=True)
class ScalingRecord:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray

    def to_raw(self, values, j):
        return np.asarray(values) * self.sd[j] + self.mean[j]


@dataclass(frozen=True)
class ModelConfig:
    """Priors, kernel choice and MCMC bookkeeping for one chain.

    ``pi`` is either a scalar inclusion probability shared by every exposure
    or a tuple of length q. ``rho_power=None`` means the literal ``2q``
    exponent in the isotropic kernel ``exp(-d^2 / rho^power)``.
    """

    kernel_mode: str = "isotropic"
    a_lambda: float = 1.0
    b_lambda: float = 0.1
    alpha_sigma: float = 1e-3
    b_sigma: float = 1e-3
    rho_shape: float = 5.0
    rho_rate: float = 5.0
    rho_power: float | None = None
    pi: float | tuple = 0.5
    slab_shape: float = 1.0
    slab_rate: float = 2.0
    temper: bool = True
    iters: int = 2000
    burnin: int = 1000
    thin: int = 5
    sigma2_literal_gamma: bool = False
    jitter: float = 1e-8
    step_init: float = 0.5
    target_accept: float = 0.35

    def __post_init__(self):
        if self.kernel_mode not in ("isotropic", "ard"):
            raise DomainError(f"kernel_mode must be 'isotropic' or 'ard', got {self.kernel_mode!r}")
        for name in ("a_lambda", "b_lambda", "alpha_sigma", "b_sigma", "rho_shape",
                     "rho_rate", "slab_shape", "slab_rate", "step_init"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be a positive finite real, got {value!r}")
        if self.rho_power is not None and not self.rho_power > 0:
            raise DomainError("rho_power must be positive")
        pis = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if np.any(pis < 0) or np.any(pis > 1):
            raise DomainError("inclusion probabilities must lie in [0, 1]")
        if not isinstance(self.pi, (int, float)):
            object.__setattr__(self, "pi", tuple(float(v) for v in pis))
        for name in ("iters", "burnin", "thin"):
            value = getattr(self, name)
            if int(value) != value:
                raise DomainError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        if self.burnin < 0 or self.iters <= self.burnin:
            raise DomainError("need iters > burnin >= 0")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.jitter < 0:
            raise DomainError("jitter must be nonnegative")
        if not 0 < self.target_accept < 1:
            raise DomainError("target_accept must lie in (0, 1)")

    @property
    def n_keep(self):
        return (self.iters - self.burnin) // self.thin

    def pi_vector(self, q):
        pis = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if pis.size == 1:
            return np.full(q, pis[0])
        if pis.size != q:
            raise DomainError(f"pi has {pis.size} entries but there are {q} exposures")
        return pis

    def power(self, q):
        return 2.0 * q if self.rho_power is None else float(self.rho_power)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class PosteriorDraw:
    """One joint state of the sampler. ``h`` lives on the draw's site set."""

    beta: np.ndarray
    sigma2: float
    lam: float
    h: np.ndarray
    rho: float | None = None
    r: np.ndarray | None = None
    eta: np.ndarray | None = None

    def check(self):
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if self.rho is not None and not self.rho > 0:
            raise DomainError("rho must be positive")
        if self.r is not None:
            r = np.asarray(self.r)
            if np.any(r < 0):
                raise DomainError("r must be nonnegative")
            if self.eta is not None and np.any((r == 0) != (np.asarray(self.eta) == 0)):
                raise DomainError("r_j == 0 must coincide with eta_j == 0")
        return self


# -- CSV ----------------------------------------------------------------------

def _parse_float(cell):
    try:
        value = float(cell)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


def load_csv(path, schema: Mapping, policy="error") -> Dataset:
    """Read a headered CSV and assign columns by role.

    ``schema`` has keys ``outcome`` (str), ``confounders`` (list) and
    ``exposures`` (list). Rows holding a missing, non-numeric or non-finite
    cell in any used column raise ``DataError`` under ``policy="error"``;
    under ``policy="drop"`` they are removed and a ``MissingDataWarning``
    carrying the count is emitted.
    """
    if policy not in ("error", "drop"):
        raise DomainError(f"unknown missing-data policy {policy!r}")
    outcome = schema["outcome"]
    confounders = list(schema.get("confounders") or [])
    exposures = list(schema.get("exposures") or [])
    if not exposures:
        raise DataError("schema must name at least one exposure column")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        cols = [outcome] + confounders + exposures
        for c in cols:
            if c not in header:
                raise MissingColumn(c)
        idx = [header.index(c) for c in cols]
        rows = []
        dropped = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            values = [_parse_float(raw[i]) if i < len(raw) else None for i in idx]
            if any(v is None for v in values):
                if policy == "error":
                    raise DataError(f"{path}:{lineno}: missing or non-numeric value")
                dropped += 1
                continue
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: zero usable rows")
    if dropped:
        warnings.warn(MissingDataWarning(dropped), stacklevel=2)
    arr = np.array(rows, dtype=float)
    p = len(confounders)
    return Dataset(
        y=arr[:, 0],
        x=arr[:, 1:1 + p],
        z=arr[:, 1 + p:],
        x_names=tuple(confounders),
        z_names=tuple(exposures),
        y_name=outcome,
    )


def write_csv(ds: Dataset, path):
    """Write a Dataset so that ``load_csv`` with ``dataset_schema(ds)`` restores it."""
    header = [ds.y_name, *ds.x_names, *ds.z_names]
    block = np.column_stack([ds.y, ds.x, ds.z])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in block:
            writer.writerow([repr(float(v)) for v in row])


def dataset_schema(ds: Dataset):
    return {"outcome": ds.y_name, "confounders": list(ds.x_names), "exposures": list(ds.z_names)}


def standardize(ds: Dataset, confounders=False):
    """Center and scale exposures (and optionally confounders) to unit population SD.

    Returns the new Dataset and a ScalingRecord for the exposure columns.
    """
    z, zrec = _standardize_block(ds.z, ds.z_names)
    x = ds.x
    if confounders and ds.p:
        x, _ = _standardize_block(ds.x, ds.x_names)
    return replace(ds, z=z, x=x), zrec


def _standardize_block(a, names):
    mean = a.mean(axis=0)
    sd = a.std(axis=0)  # population convention (ddof=0)
    for j, s in enumerate(sd):
        if not s > 0 or s < 1e-14 * max(1.0, abs(mean[j])):
            raise DegenerateColumn(names[j] if j < len(names) else j)
    return (a - mean) / sd, ScalingRecord(tuple(names), mean, sd)


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw)


__all__ = [
    "Dataset",
    "ModelConfig",
    "PosteriorDraw",
    "ScalingRecord",
    "MissingDataWarning",
    "load_csv",
    "write_csv",
    "dataset_schema",
    "standardize",
]
