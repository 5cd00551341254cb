"""Random partitions and the sqrt(K)-scaled sketched subset model.

The sketching matrix S_k (n x n_k, columns sqrt(K) * e_i) is never formed.
A subset is held as its index set plus the scaled outcome/confounder blocks;
the sketched Gram matrix S_k' K S_k equals ``scale_c * K[I_k, I_k]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError, DomainError, SubsetTooSmall
from .kernel import VFactor

MIN_SUBSET_SIZE = 32


@dataclass(frozen=True)
class PartitionPlan:
    K: int
    index_sets: tuple
    seed: object = None
    replace: bool = False

    @property
    def n(self):
        if self.replace:
            return int(max(int(s.max()) for s in self.index_sets) + 1)
        return int(sum(len(s) for s in self.index_sets))

    def labels(self):
        """subset id for each row (disjoint plans only)."""
        if self.replace:
            raise DomainError("labels are undefined for with-replacement plans")
        out = np.empty(self.n, dtype=int)
        for k, idx in enumerate(self.index_sets):
            out[idx] = k
        return out


@dataclass(frozen=True)
class SketchedSubset:
    y_t: np.ndarray
    x_t: np.ndarray
    z_sub: np.ndarray
    scale_c: float
    index: np.ndarray
    k: int | None = None

    @property
    def n_k(self):
        return self.y_t.shape[0]

    @property
    def p(self):
        return self.x_t.shape[1]

    @property
    def q(self):
        return self.z_sub.shape[1]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_partition(n, K, seed=None, replace=False):
    """Uniformly random balanced partition of ``range(n)`` into K index sets.

    With ``replace=True`` each subset instead draws its n_k indices uniformly
    with replacement (sets may overlap).
    """
    n, K = int(n), int(K)
    if K < 1 or K > n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={n}")
    rng = _rng(seed)
    if replace:
        sizes = [len(a) for a in np.array_split(np.arange(n), K)]
        sets = tuple(np.sort(rng.integers(0, n, size=s)) for s in sizes)
    else:
        perm = rng.permutation(n)
        sets = tuple(np.sort(part) for part in np.array_split(perm, K))
    return PartitionPlan(K=K, index_sets=sets, seed=seed, replace=replace)


def split_count(n, t, min_subset_size=MIN_SUBSET_SIZE):
    """K = max(1, round(n^t)), refusing plans whose subsets fall below the floor."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0 <= t <= 0.7:
        raise DomainError(f"split exponent t must lie in [0, 0.7], got {t}")
    K = max(1, int(round(n ** t)))
    if K > 1 and n // K < min_subset_size:
        raise SubsetTooSmall(
            f"n={n}, t={t}: K={K} gives subsets of {n // K} < {min_subset_size} rows"
        )
    return K


def sketch(ds: Dataset, plan: PartitionPlan, k, temper=True) -> SketchedSubset:
    if not 0 <= k < plan.K:
        raise DomainError(f"subset index {k} outside 0..{plan.K - 1}")
    idx = np.asarray(plan.index_sets[k])
    c = float(plan.K) if temper else 1.0
    root = math.sqrt(c)
    return SketchedSubset(
        y_t=root * ds.y[idx],
        x_t=root * ds.x[idx],
        z_sub=ds.z[idx],
        scale_c=c,
        index=idx,
        k=k,
    )


def full_subset(ds: Dataset) -> SketchedSubset:
    """The whole dataset viewed as a single identity-sketched subset."""
    return SketchedSubset(
        y_t=ds.y, x_t=ds.x, z_sub=ds.z, scale_c=1.0, index=np.arange(ds.n), k=None
    )


def subset_v_matrix(sk: SketchedSubset, gram_sub, lam):
    """Factorized ``S_k'S_k + lam * S_k'K S_k = scale_c * (I + lam * K_sub)``."""
    return VFactor(gram_sub, lam, sk.scale_c)


def write_partition(plan: PartitionPlan, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "subset_id"])
        rows = sorted((int(i), k) for k, idx in enumerate(plan.index_sets) for i in idx)
        w.writerows(rows)


def read_partition(path):
    members = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["row_index", "subset_id"]:
            raise DataError(f"{path}: expected header row_index,subset_id")
        for row in reader:
            members.setdefault(int(row["subset_id"]), []).append(int(row["row_index"]))
    K = len(members)
    if sorted(members) != list(range(K)):
        raise DataError(f"{path}: subset ids must be 0..K-1")
    sets = tuple(np.sort(np.array(members[k], dtype=int)) for k in range(K))
    flat = np.concatenate(sets)
    disjoint = np.unique(flat).size == flat.size
    return PartitionPlan(K=K, index_sets=sets, replace=not disjoint)
