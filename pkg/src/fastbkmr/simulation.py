"""Synthetic mixture-exposure study and the (n, t) sweep runner."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, ModelConfig
from .errors import DomainError, FastBKMRError
from .partition import MIN_SUBSET_SIZE, split_count
from .summary import calibration_regression

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["n", "t", "rep", "K", "gamma0", "gamma1", "r2", "beta_hat", "seconds", "status"]


@dataclass(frozen=True)
class SimConfig:
    n: int
    q: int = 4
    t: float = 0.0
    replications: int = 10
    beta0: float = 2.0
    sigma2: float = 0.5
    seed: int = 0
    confounder_sd_mode: bool = False

    def __post_init__(self):
        if self.n < 64:
            raise DomainError("simulation needs n >= 64")
        if not 0 <= self.t <= 0.7:
            raise DomainError("t must lie in [0, 0.7]")
        if self.replications < 1:
            raise DomainError("need at least one replication")
        if self.q < 2:
            raise DomainError("the response surface uses two exposures; q >= 2")


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def true_h(z):
    """4 * logistic((5/6) * (z1 + z2 + z1 z2 / 2)); accepts one profile or a (n, q) array."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 2:
        raise DomainError("true_h needs at least two exposure components")
    z1, z2 = z[..., 0], z[..., 1]
    return 4.0 * logistic((5.0 / 6.0) * (z1 + z2 + 0.5 * z1 * z2))


def gen_data(cfg: SimConfig, rep_seed):
    """One replicate: exposures N(0, 1), confounder N(3 cos z1, 2), outcome N(beta0 x + h0, sigma2).

    The 2 in the confounder law is a variance unless ``cfg.confounder_sd_mode``.
    """
    rng = np.random.default_rng(rep_seed)
    n, q = cfg.n, cfg.q
    z = rng.standard_normal((n, q))
    x_sd = 2.0 if cfg.confounder_sd_mode else math.sqrt(2.0)
    x = 3.0 * np.cos(z[:, 0]) + x_sd * rng.standard_normal(n)
    h = true_h(z)
    y = cfg.beta0 * x + h + math.sqrt(cfg.sigma2) * rng.standard_normal(n)
    ds = Dataset(y=y, x=x[:, None], z=z, x_names=("x",),
                 z_names=tuple(f"z{j + 1}" for j in range(q)))
    return ds, h


def cell_seed(master, n, t, rep):
    """Seed for one (n, t, rep) cell; data depend on (n, rep) only so t-cells share data."""
    data_ss = np.random.SeedSequence(master, spawn_key=(int(n), int(rep), 0))
    fit_ss = np.random.SeedSequence(master, spawn_key=(int(n), int(rep), 1, int(round(t * 1000))))
    return data_ss, fit_ss


def run_cell(n, t, rep, base: ModelConfig, master_seed=0, jobs=1, method="barycenter",
             min_subset_size=MIN_SUBSET_SIZE, sim_kw=None):
    """Generate, fit, combine and score one replicate; returns a result row."""
    from .pipeline import fit_dataset

    row = {"n": n, "t": t, "rep": rep, "K": "", "gamma0": "", "gamma1": "", "r2": "",
           "beta_hat": "", "seconds": "", "status": "ok"}
    try:
        row["K"] = max(1, int(round(n ** t)))
        K = split_count(n, t, min_subset_size)
        sim = SimConfig(n=n, t=t, seed=master_seed, **(sim_kw or {}))
        data_ss, fit_ss = cell_seed(master_seed, n, t, rep)
        ds, h0 = gen_data(sim, data_ss)
        t0 = time.perf_counter()
        fit = fit_dataset(ds, base, K, fit_ss, jobs=jobs, method=method, h_grid="train")
        seconds = time.perf_counter() - t0
        g0, g1, r2 = calibration_regression(h0, fit.h_hat)
        row.update(gamma0=g0, gamma1=g1, r2=r2,
                   beta_hat=fit.combined["beta_1"].mean(), seconds=seconds)
    except FastBKMRError as exc:
        row["status"] = f"{type(exc).__name__}: {exc}"
        log.warning("cell n=%s t=%s rep=%s failed: %s", n, t, rep, row["status"])
    return row


def _cell_task(args):
    return run_cell(*args)


def run_experiment(n_list, t_list, reps, base: ModelConfig, master_seed=0, jobs=1,
                   method="barycenter", min_subset_size=MIN_SUBSET_SIZE, sim_kw=None,
                   progress=None):
    """Sweep every (n, t, rep) cell; failures are recorded and the sweep continues.

    With ``jobs > 1`` whole cells are farmed out to worker processes (each
    cell then runs its subset chains serially). Rows come back in grid order
    and are identical for any ``jobs`` because every cell owns its seeds.
    """
    grid = [(n, t, rep) for n in n_list for t in t_list for rep in range(reps)]
    tasks = [(n, t, rep, base, master_seed, 1, method, min_subset_size, sim_kw)
             for n, t, rep in grid]
    rows = []
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        from .pipeline import _limit_blas

        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)), initializer=_limit_blas) as pool:
            for row in pool.map(_cell_task, tasks):
                rows.append(row)
                if progress:
                    progress(row)
        return rows
    for task in tasks:
        row = _cell_task(task)
        rows.append(row)
        if progress:
            progress(row)
    return rows


def write_results(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})


def sweep_config(paper_scale=False, **kw):
    """Desk-scale sweep defaults, or the 10^4-iteration budget with --paper-scale."""
    if paper_scale:
        base = dict(iters=10_000, burnin=5_000, thin=5)
    else:
        base = dict(iters=2000, burnin=1000, thin=5)
    base.update({k: v for k, v in kw.items() if v is not None})
    return replace(ModelConfig(), **base)
