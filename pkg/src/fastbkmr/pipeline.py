"""Partition -> parallel subset chains -> combination -> h at reference sites."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .combine import combine, combine_columns
from .data import Dataset, ModelConfig
from .partition import PartitionPlan, make_partition, sketch
from .sampler import ChainOutput, run_chain
from .summary import PREDICT_JITTER, predict_h

log = logging.getLogger(__name__)

JOBS_ENV = "FASTBKMR_JOBS"


def default_jobs():
    env = os.environ.get(JOBS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def seed_tree(seed):
    """(partition seed, function k -> chain seed) derived from one master seed.

    Chain seeds depend only on the subset index, never on the worker that
    runs them, so results are identical for any number of jobs.
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy, key = seed.entropy, tuple(seed.spawn_key)
    else:
        entropy, key = int(seed), ()
    part = np.random.SeedSequence(entropy, spawn_key=key + (0,))

    def chain(k):
        return np.random.SeedSequence(entropy, spawn_key=key + (1, int(k)))

    return part, chain


def _limit_blas():
    threadpool_limits(1)


def _run_one(task):
    sub, cfg, seed, k = task
    with threadpool_limits(1):
        return run_chain(sub, cfg, seed, subset=k)


def run_subset_chains(subsets, cfg, chain_seed, jobs=1):
    tasks = [(sub, cfg, chain_seed(k), k) for k, sub in enumerate(subsets)]
    jobs = max(1, min(int(jobs), len(tasks)))
    if jobs == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_limit_blas) as pool:
        return list(pool.map(_run_one, tasks))


def h_draws_at(out: ChainOutput, z_train, z_star, power=None, known=None):
    """(N, m) predictive means of h at ``z_star`` for every draw of one chain.

    ``known`` maps star rows to training rows that coincide with them; those
    entries are copied from the draw instead of re-predicted.
    """
    m = z_star.shape[0]
    res = np.empty((len(out), m))
    todo = np.arange(m)
    if known is not None:
        star_rows, train_rows = known
        res[:, star_rows] = out.h[:, train_rows]
        todo = np.setdiff1d(todo, star_rows)
    if todo.size:
        zs = z_star[todo]
        for i in range(len(out)):
            res[i, todo] = predict_h(out.draw(i), z_train, zs, power=power, jitter=PREDICT_JITTER)
    return res


@dataclass
class FitResult:
    plan: PartitionPlan
    subsets: list
    outputs: list
    combined: dict
    config: ModelConfig
    method: str
    h_hat: np.ndarray | None = None
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def h_at(self, z_star):
        """Combined (atoms, weights) of h at arbitrary exposure profiles."""
        z_star = np.atleast_2d(np.asarray(z_star, dtype=float))
        power = self.config.power(z_star.shape[1])
        blocks = [h_draws_at(o, s.z_sub, z_star, power) for o, s in zip(self.outputs, self.subsets)]
        atoms, _ = combine_columns(blocks, self.method)
        return atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0])


def training_blocks(ds: Dataset, plan, subsets, outputs, cfg):
    power = cfg.power(ds.q)
    blocks = []
    for sub, out in zip(subsets, outputs):
        idx = np.asarray(sub.index)
        known = None if plan.replace else (idx, np.arange(idx.size))
        blocks.append(h_draws_at(out, sub.z_sub, ds.z, power, known))
    return blocks


def fit_dataset(ds: Dataset, cfg: ModelConfig, K, seed, jobs=1, method="barycenter",
                h_grid="train", joint=(), epsilon=None, replace=False):
    """Run the divide-and-conquer fit on ``ds`` with K subsets.

    ``h_grid`` is ``"train"`` (combine h at all n observed exposure profiles,
    giving ``h_hat``), ``None`` (skip h), or an explicit (m, q) array.
    """
    t0 = time.perf_counter()
    part_seed, chain_seed = seed_tree(seed)
    plan = make_partition(ds.n, K, np.random.default_rng(part_seed), replace=replace)
    subsets = [sketch(ds, plan, k, temper=cfg.temper) for k in range(plan.K)]
    outputs = run_subset_chains(subsets, cfg, chain_seed, jobs)
    if isinstance(h_grid, str) and h_grid == "train":
        blocks = training_blocks(ds, plan, subsets, outputs, cfg)
    elif h_grid is None:
        blocks = None
    else:
        z_star = np.atleast_2d(np.asarray(h_grid, dtype=float))
        power = cfg.power(ds.q)
        blocks = [h_draws_at(o, s.z_sub, z_star, power) for o, s in zip(outputs, subsets)]
    combined = combine(outputs, method=method, h_blocks=blocks, joint=joint, epsilon=epsilon)
    h_hat = combined["h"].mean() if "h" in combined else None
    return FitResult(plan=plan, subsets=subsets, outputs=outputs, combined=combined,
                     config=cfg, method=method, h_hat=h_hat,
                     seconds=time.perf_counter() - t0)
