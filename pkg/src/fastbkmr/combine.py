"""Aggregation of subset posteriors in Wasserstein-2 space.

Subset posteriors enter as atomic (empirical) measures. Four solvers are
provided:

* ``w2_exact`` / ``barycenter_lp``: the transport linear programs, solved
  with HiGHS. Exact, and only practical for a few hundred atoms.
* ``barycenter_sinkhorn``: entropic barycenter over a fixed support (the
  pooled atoms), by iterative Bregman projections in the log domain.
* ``barycenter_1d``: the exact barycenter of 1-D measures, obtained by
  averaging quantile functions. Used for every scalar functional by default.
* ``geometric_median_w2``: Weiszfeld iterations whose inner step is a
  weighted barycenter, i.e. the minimizer of the sum of unsquared W2
  distances. Robust to a minority of outlying subset posteriors.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp
from scipy.spatial.distance import cdist

from .errors import ConfigMismatch, DomainError, NumericalError, TooLarge

LP_MAX_ATOMS = 500


@dataclass
class AtomicMeasure:
    atoms: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] == 0:
            raise DomainError("atoms must be a nonempty (N, d) array")
        if not np.all(np.isfinite(a)):
            raise DomainError("atoms must be finite")
        if self.weights is None:
            w = np.full(a.shape[0], 1.0 / a.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != a.shape[0]:
                raise DomainError("one weight per atom required")
            if np.any(w < 0):
                raise DomainError("weights must be nonnegative")
            if abs(w.sum() - 1.0) >= 1e-10:
                raise DomainError(f"weights sum to {w.sum():.12g}, not 1")
        self.atoms = a
        self.weights = w

    @property
    def d(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    def mean(self):
        return self.weights @ self.atoms

    def shift(self, c):
        return AtomicMeasure(self.atoms + c, self.weights.copy())


@dataclass
class CombinedPosterior:
    """Combined measure for one functional.

    ``atoms`` is (M,) for a scalar, (M, d) for a joint vector, and for the
    pointwise-combined h block (M, m): column i holds the atoms of h(z_i).
    ``weights`` (M,) lie on the simplex.
    """

    name: str
    atoms: np.ndarray
    weights: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.clip(np.asarray(self.weights, dtype=float), 0.0, None)
        total = w.sum()
        if not total > 0:
            raise NumericalError(f"{self.name}: combined weights vanished")
        self.weights = w / total
        self.atoms = np.asarray(self.atoms, dtype=float)

    def mean(self):
        return self.weights @ self.atoms

    def var(self):
        m = self.mean()
        return self.weights @ (self.atoms - m) ** 2

    def sd(self):
        return np.sqrt(self.var())

    def quantile(self, probs):
        from .summary import weighted_quantile

        return weighted_quantile(self.atoms, self.weights, probs)

    def measure(self):
        return AtomicMeasure(self.atoms, self.weights)


def _as_measure(m):
    return m if isinstance(m, AtomicMeasure) else AtomicMeasure(m)


# -- exact transport -----------------------------------------------------------

def sq_cost(x, y):
    return cdist(np.atleast_2d(x), np.atleast_2d(y), "sqeuclidean")


def _transport_lp(a, b, cost):
    m, n = cost.shape
    rows = sparse.kron(sparse.eye(m), np.ones((1, n)))
    # last column constraint is implied by the others
    cols = sparse.kron(np.ones((1, m)), sparse.eye(n)).tocsr()[:-1]
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    return res.fun, res.x.reshape(m, n)


def w2_exact(mu, nu, max_atoms=LP_MAX_ATOMS):
    """W2 between two atomic measures via the transport linear program."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.d != nu.d:
        raise DomainError("measures live in different dimensions")
    if len(mu) * len(nu) > max_atoms * max_atoms:
        raise TooLarge(f"{len(mu)} x {len(nu)} atoms exceeds the LP size guard")
    mu, nu = _prune(mu), _prune(nu)
    cost = sq_cost(mu.atoms, nu.atoms)
    val, _ = _transport_lp(mu.weights, nu.weights, cost)
    return float(np.sqrt(max(val, 0.0)))


def _prune(m, floor=1e-14):
    keep = m.weights > floor
    if keep.all():
        return m
    w = m.weights[keep]
    return AtomicMeasure(m.atoms[keep], w / w.sum())


def w2_1d(x, y, wx=None, wy=None):
    """Exact W2 between 1-D discrete measures by integrating quantile differences."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    wx = np.full(x.size, 1.0 / x.size) if wx is None else np.asarray(wx, float)
    wy = np.full(y.size, 1.0 / y.size) if wy is None else np.asarray(wy, float)
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, wx, y, wy = x[ox], wx[ox], y[oy], wy[oy]
    cx, cy = np.cumsum(wx) / wx.sum(), np.cumsum(wy) / wy.sum()
    levels = np.union1d(cx, cy)
    lo = np.concatenate([[0.0], levels[:-1]])
    mid = 0.5 * (lo + levels)
    qx = x[np.minimum(np.searchsorted(cx, mid), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mid), y.size - 1)]
    return float(np.sqrt(np.sum((levels - lo) * (qx - qy) ** 2)))


def barycenter_lp(measures, support=None, weights=None):
    """Exact fixed-support barycenter: argmin_a sum_k w_k W2^2(a, mu_k) by LP."""
    measures = [_as_measure(m) for m in measures]
    support = _pooled(measures) if support is None else np.asarray(support, dtype=float)
    if support.ndim == 1:
        support = support[:, None]
    K = len(measures)
    lam = _mixing(weights, K)
    M = support.shape[0]
    costs = [sq_cost(support, m.atoms) for m in measures]
    sizes = [c.size for c in costs]
    if sum(sizes) > 4_000_000:
        raise TooLarge("barycenter LP too large")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_var = offsets[-1] + M
    c = np.concatenate([lam[k] * costs[k].ravel() for k in range(K)] + [np.zeros(M)])
    blocks, rhs = [], []
    for k, m in enumerate(measures):
        nk = len(m)
        row_sum = sparse.kron(sparse.eye(M), np.ones((1, nk)))
        col_sum = sparse.kron(np.ones((1, M)), sparse.eye(nk))
        pad_l = sparse.csr_matrix((M, offsets[k]))
        pad_r = sparse.csr_matrix((M, offsets[-1] - offsets[k + 1]))
        blocks.append(sparse.hstack([pad_l, row_sum, pad_r, -sparse.eye(M)]))
        rhs.append(np.zeros(M))
        pad_l = sparse.csr_matrix((nk, offsets[k]))
        pad_r = sparse.csr_matrix((nk, offsets[-1] - offsets[k + 1] + M))
        blocks.append(sparse.hstack([pad_l, col_sum, pad_r]))
        rhs.append(m.weights)
    a_eq = sparse.vstack(blocks).tocsr()
    res = linprog(c, A_eq=a_eq, b_eq=np.concatenate(rhs), bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"barycenter LP failed: {res.message}")
    a = res.x[offsets[-1]:]
    atoms = support[:, 0] if support.shape[1] == 1 else support
    return CombinedPosterior("barycenter", atoms, a, "lp",
                             {"objective": float(res.fun), "n_var": int(n_var)})


def barycenter_objective(weights_a, support, measures, mixing=None):
    """sum_k w_k W2^2(a, mu_k) with exact transport."""
    measures = [_as_measure(m) for m in measures]
    lam = _mixing(mixing, len(measures))
    a = np.asarray(weights_a, dtype=float)
    support = np.asarray(support, dtype=float)
    bar = _prune(AtomicMeasure(support.reshape(a.size, -1), a / a.sum()))
    return float(sum(l * w2_exact(bar, m) ** 2 for l, m in zip(lam, measures)))


# -- entropic barycenter -------------------------------------------------------

def _pooled(measures):
    return np.vstack([m.atoms for m in measures])


def _mixing(weights, K):
    if weights is None:
        return np.full(K, 1.0 / K)
    w = np.asarray(weights, dtype=float)
    if w.shape != (K,) or np.any(w < 0) or not w.sum() > 0:
        raise DomainError("mixing weights must be K nonnegative numbers")
    return w / w.sum()


def default_epsilon(costs, factor=0.01):
    med = float(np.median(np.concatenate([c.ravel() for c in costs])))
    return factor * med if med > 0 else factor


def barycenter_sinkhorn(measures, support=None, epsilon=None, weights=None,
                        max_iter=5000, tol=1e-8, eps_scaling=True, eps_factor=0.01):
    """Entropic W2 barycenter over a fixed support (default: pooled atoms).

    Iterative Bregman projections on dual potentials in the log domain, with
    epsilon annealed geometrically from the median cost down to ``epsilon``
    (default ``eps_factor`` times the median squared cost). Non-convergence is reported
    through ``diagnostics['converged']`` and a RuntimeWarning, not raised.
    """
    measures = [_as_measure(m) for m in measures]
    if not measures:
        raise DomainError("need at least one measure")
    K = len(measures)
    lam = _mixing(weights, K)
    support = _pooled(measures) if support is None else np.asarray(support, dtype=float)
    if support.ndim == 1:
        support = support[:, None]
    costs = [sq_cost(support, m.atoms) for m in measures]
    eps = default_epsilon(costs, eps_factor) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise DomainError("epsilon must be positive")
    log_b = [np.log(np.where(m.weights > 0, m.weights, 1e-300)) for m in measures]
    M = support.shape[0]
    # dual potentials: plan_k = exp((f_k[:, None] + g_k[None, :] - C_k) / eps)
    f = [np.zeros(M) for _ in range(K)]
    g = [np.zeros(len(m)) for m in measures]
    schedule = [eps]
    if eps_scaling:
        start = max(default_epsilon(costs, 1.0), eps)
        schedule = list(np.geomspace(start, eps, max(2, int(np.ceil(np.log2(start / eps))) + 1)))
    a = np.full(M, 1.0 / M)
    total = 0
    converged = False
    change = np.inf
    for stage, e in enumerate(schedule):
        last = stage == len(schedule) - 1
        budget = max_iter if last else max(50, max_iter // 20)
        converged = False
        for _ in range(budget):
            total += 1
            lse_rows = []
            for k in range(K):
                g[k] = e * (log_b[k] - logsumexp((f[k][:, None] - costs[k]) / e, axis=0))
                lse_rows.append(logsumexp((g[k][None, :] - costs[k]) / e, axis=1))
            # log of each plan's first marginal, geometric mean gives the barycenter
            log_a = sum(lam[k] * (f[k] / e + lse_rows[k]) for k in range(K))
            for k in range(K):
                f[k] = e * (log_a - lse_rows[k])
            a_new = np.exp(log_a - logsumexp(log_a))
            change = float(np.max(np.abs(a_new - a)))
            a = a_new
            if change < tol:
                converged = True
                break
    if not converged:
        warnings.warn(f"Sinkhorn barycenter did not converge in {max_iter} iterations "
                      f"(last change {change:.2e})", RuntimeWarning, stacklevel=2)
    cost = 0.0
    for k in range(K):
        plan = np.exp((f[k][:, None] + g[k][None, :] - costs[k]) / eps)
        cost += lam[k] * float(np.sum(plan * costs[k]))
    atoms = support[:, 0] if support.shape[1] == 1 else support
    return CombinedPosterior("barycenter", atoms, a, "sinkhorn",
                             {"iterations": total, "converged": converged,
                              "epsilon": eps, "objective": cost})


# -- 1-D quantile barycenter -----------------------------------------------------

def _quantile_matrix(samples, n_out):
    """Empirical quantiles at levels (m - 1/2)/n_out, one row per sample list.

    Each sample list may be (N_k,) or (N_k, m) for m functionals at once;
    the result is (K, n_out) or (K, n_out, m).
    """
    levels = (np.arange(n_out) + 0.5) / n_out
    rows = []
    for s in samples:
        s = np.sort(np.asarray(s, dtype=float), axis=0)
        idx = np.ceil(levels * s.shape[0]).astype(int) - 1
        rows.append(s[np.clip(idx, 0, s.shape[0] - 1)])
    return np.stack(rows)


def _n_out(samples, n_out):
    if n_out is None:
        n_out = max(np.asarray(s).shape[0] for s in samples)
    if any(np.asarray(s).shape[0] == 0 for s in samples):
        raise DomainError("every sample list must be nonempty")
    return int(n_out)


def barycenter_1d(samples, n_out=None, weights=None):
    """Exact W2 barycenter of 1-D empirical measures by quantile averaging.

    Returns ``n_out`` equally weighted atoms (default: the largest input
    size); atom m averages the (m - 1/2)/n_out quantiles. With equal input
    sizes this is the exact barycenter. Inputs may carry a trailing axis of
    independent functionals.
    """
    samples = list(samples)
    n_out = _n_out(samples, n_out)
    q = _quantile_matrix(samples, n_out)
    lam = _mixing(weights, len(samples))
    return np.tensordot(lam, q, axes=1)


# -- geometric median ------------------------------------------------------------

def _median_1d(qmat, tol=1e-6, max_iter=500, coincide=1e-12):
    """Weiszfeld in the quantile-function Hilbert space.

    qmat is (K, n_out, m); returns (n_out, m) atoms and per-column diagnostics.
    """
    K, n_out, m = qmat.shape
    w = np.full((K, m), 1.0 / K)
    cur = np.einsum("km,knm->nm", w, qmat)

    def dists(c):
        return np.sqrt(np.mean((qmat - c[None]) ** 2, axis=1))  # (K, m)

    d = dists(cur)
    obj = d.sum(axis=0)
    active = np.ones(m, dtype=bool)
    iters = np.zeros(m, dtype=int)
    scale = np.maximum(np.abs(qmat).max(axis=(0, 1)), 1.0)
    for _ in range(max_iter):
        if not active.any():
            break
        hit = d.min(axis=0) <= coincide * scale
        snap = active & hit
        if snap.any():
            best = d.argmin(axis=0)
            for col in np.flatnonzero(snap):
                cur[:, col] = qmat[best[col], :, col]
                w[:, col] = 0.0
                w[best[col], col] = 1.0
            active &= ~snap
        if not active.any():
            break
        inv = 1.0 / np.maximum(d, coincide * scale)
        w_new = inv / inv.sum(axis=0)
        nxt = np.einsum("km,knm->nm", w_new, qmat)
        d_new = dists(nxt)
        obj_new = d_new.sum(axis=0)
        upd = active
        cur[:, upd] = nxt[:, upd]
        w[:, upd] = w_new[:, upd]
        d[:, upd] = d_new[:, upd]
        iters[upd] += 1
        done = np.abs(obj - obj_new) <= tol * np.maximum(obj, 1e-300)
        obj = np.where(upd, obj_new, obj)
        active &= ~done
    return cur, {"iterations": iters, "weights": w, "objective": obj}


def geometric_median_w2(measures, weights=None, tol=1e-6, max_iter=500, n_out=None,
                        epsilon=None):
    """Measure minimizing sum_k W2(Pi, Pi_k), by Weiszfeld reweighting of barycenters.

    1-D measures use exact quantile averaging; higher-dimensional ones use
    the Sinkhorn barycenter on the pooled support with exact W2 distances.
    When the iterate coincides with an input measure, that measure is returned.
    For K = 2 the midpoint barycenter is returned.
    """
    measures = [_as_measure(m) for m in measures]
    K = len(measures)
    if K < 1:
        raise DomainError("need at least one measure")
    if all(m.d == 1 for m in measures) and all(np.allclose(m.weights, m.weights[0]) for m in measures):
        samples = [m.atoms[:, 0] for m in measures]
        n_out = _n_out(samples, n_out)
        q = _quantile_matrix(samples, n_out)[:, :, None]
        if weights is not None:
            raise DomainError("prior mixing weights are not supported for the median")
        atoms, diag = _median_1d(q, tol=tol, max_iter=max_iter)
        return CombinedPosterior("median", atoms[:, 0], np.full(n_out, 1.0 / n_out), "median",
                                 {"iterations": int(diag["iterations"][0]),
                                  "subset_weights": diag["weights"][:, 0].tolist(),
                                  "objective": float(diag["objective"][0])})
    support = _pooled(measures)
    w = np.full(K, 1.0 / K)
    bar = barycenter_sinkhorn(measures, support, epsilon, w)

    def distances(b):
        keep = b.weights > 1e-12
        mb = AtomicMeasure(support[keep], b.weights[keep] / b.weights[keep].sum())
        return np.array([w2_exact(mb, m) for m in measures])

    d = distances(bar)
    obj = d.sum()
    it = 0
    for it in range(1, max_iter + 1):
        if d.min() <= 1e-12 * max(1.0, obj):
            k = int(d.argmin())
            m = measures[k]
            return CombinedPosterior("median", m.atoms, m.weights, "median",
                                     {"iterations": it, "coincident": k})
        w = (1.0 / d) / (1.0 / d).sum()
        bar = barycenter_sinkhorn(measures, support, bar.diagnostics["epsilon"], w)
        d = distances(bar)
        new = d.sum()
        if abs(obj - new) <= tol * obj:
            obj = new
            break
        obj = new
    return CombinedPosterior("median", bar.atoms, bar.weights, "median",
                             {"iterations": it, "subset_weights": w.tolist(), "objective": obj})


# -- chain-level combination ------------------------------------------------------

def scalar_functionals(out):
    """name -> (N,) arrays of every scalar functional carried by a ChainOutput."""
    f = {}
    for j in range(out.beta.shape[1]):
        f[f"beta_{j + 1}"] = out.beta[:, j]
    f["sigma2"] = out.sigma2
    f["lambda"] = out.lam
    if out.r is None:
        f["rho"] = out.rho
    else:
        for j in range(out.r.shape[1]):
            f[f"r_{j + 1}"] = out.r[:, j]
        for j in range(out.eta.shape[1]):
            f[f"eta_{j + 1}"] = out.eta[:, j].astype(float)
    return f


def check_compatible(outputs):
    if not outputs:
        raise DomainError("no subset outputs to combine")
    ref = outputs[0]
    for o in outputs[1:]:
        if o.kernel_mode != ref.kernel_mode:
            raise ConfigMismatch("subset chains used different kernel modes")
        if o.beta.shape[1] != ref.beta.shape[1]:
            raise ConfigMismatch("subset chains have different numbers of confounders")
        if o.r is not None and o.r.shape[1] != ref.r.shape[1]:
            raise ConfigMismatch("subset chains have different numbers of exposures")
        if o.config is not None and ref.config is not None and o.config != ref.config:
            raise ConfigMismatch("subset chains were run with different model configurations")


def combine_columns(blocks, method="barycenter", n_out=None):
    """Pointwise combination of K (N_k, m) draw blocks; returns (n_out, m) atoms, diagnostics."""
    n_out = _n_out(blocks, n_out)
    q = _quantile_matrix(blocks, n_out)
    if q.ndim == 2:
        q = q[:, :, None]
    if method == "barycenter":
        return q.mean(axis=0), {}
    if method == "median":
        atoms, diag = _median_1d(q)
        return atoms, {"iterations_max": int(diag["iterations"].max())}
    raise DomainError(f"unknown combination method {method!r}")


def combine(outputs, method="barycenter", h_blocks=None, joint=(), epsilon=None, n_out=None):
    """Combine K subset chains into per-functional combined posteriors.

    Scalar functionals are combined marginally by 1-D quantile averaging
    (``method="barycenter"``) or the Weiszfeld median (``method="median"``).
    ``h_blocks``, when given, is a list of K (N_k, m) arrays of h draws on a
    shared grid and is combined pointwise into a single ``"h"`` entry.
    ``joint`` lists tuples of scalar functional names to combine as vectors
    with the Sinkhorn solver (or its Weiszfeld median).
    """
    if method not in ("barycenter", "median"):
        raise DomainError(f"unknown combination method {method!r}")
    check_compatible(outputs)
    per_chain = [scalar_functionals(o) for o in outputs]
    names = list(per_chain[0])
    result = {}
    block = [np.column_stack([pc[name] for name in names]) for pc in per_chain]
    atoms, diag = combine_columns(block, method, n_out)
    uniform = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
    solver = "quantile" if method == "barycenter" else "median"
    for i, name in enumerate(names):
        result[name] = CombinedPosterior(name, atoms[:, i], uniform, solver,
                                         {"K": len(outputs), **diag})
    if h_blocks is not None:
        if len({b.shape[1] for b in h_blocks}) != 1:
            raise ConfigMismatch("h draws are not on a shared grid")
        atoms, diag = combine_columns(h_blocks, method, n_out)
        result["h"] = CombinedPosterior("h", atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]),
                                        solver, {"K": len(outputs), "pointwise": True, **diag})
    for group in joint:
        group = tuple(group)
        missing = [g for g in group if g not in names]
        if missing:
            raise DomainError(f"unknown functionals in joint group: {missing}")
        measures = [AtomicMeasure(np.column_stack([pc[g] for g in group])) for pc in per_chain]
        if method == "median":
            cp = geometric_median_w2(measures, epsilon=epsilon)
        else:
            cp = barycenter_sinkhorn(measures, epsilon=epsilon)
        cp.name = "+".join(group)
        result[cp.name] = cp
    return result


# -- files ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_combined(combined, directory):
    """One CSV per functional (``functional, value[_j], weight``) plus diagnostics.json."""
    import os

    os.makedirs(directory, exist_ok=True)
    diagnostics = {}
    for name, cp in combined.items():
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if cp.diagnostics.get("pointwise"):
                w.writerow(["functional", "value", "weight"])
                for i in range(cp.atoms.shape[1]):
                    for a, wt in zip(cp.atoms[:, i], cp.weights):
                        w.writerow([f"h_{i + 1}", _fmt(a), _fmt(wt)])
            elif cp.atoms.ndim == 2:
                d = cp.atoms.shape[1]
                w.writerow(["functional", *[f"value_{j + 1}" for j in range(d)], "weight"])
                for row, wt in zip(cp.atoms, cp.weights):
                    w.writerow([name, *[_fmt(v) for v in row], _fmt(wt)])
            else:
                w.writerow(["functional", "value", "weight"])
                for a, wt in zip(cp.atoms, cp.weights):
                    w.writerow([name, _fmt(a), _fmt(wt)])
        diagnostics[name] = {"method": cp.method, **_jsonable(cp.diagnostics)}
    with open(os.path.join(directory, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (np.floating, np.integer, np.bool_)):
            v = v.item()
        out[k] = v
    return out


def read_combined(path):
    """Read one combined-posterior CSV back into a CombinedPosterior."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    names = [r[0] for r in rows]
    vals = np.array([[float(v) for v in r[1:-1]] for r in rows])
    weights = np.array([float(r[-1]) for r in rows])
    if names and names[0].startswith("h_") and len(set(names)) > 1:
        m = len(dict.fromkeys(names))
        n_atoms = len(rows) // m
        atoms = vals[:, 0].reshape(m, n_atoms).T
        return CombinedPosterior("h", atoms, weights[:n_atoms], "file", {"pointwise": True})
    atoms = vals[:, 0] if vals.shape[1] == 1 else vals
    return CombinedPosterior(names[0] if names else "", atoms, weights, "file")
