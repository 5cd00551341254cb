"""Collapsed Gibbs / Metropolis-Hastings sampler for kernel machine regression.

One sweep updates beta and sigma^2 from their Gibbs conditionals (h
integrated out), lambda by a log-scale random walk, the kernel parameters
(rho, or every (r_j, eta_j) pair in ARD mode), and finally h. Since no other
conditional depends on h, h is only drawn at iterations that are retained.

All updates work on a :class:`~fastbkmr.partition.SketchedSubset`. For the
sketched model ``Y_t ~ N(h_t + X_t beta, sigma^2 c I)``, ``h_t ~ N(0, tau c K)``
the conditionals keep their full-data form with ``V = c (I + lambda K)``;
the h conditional carries the extra factor c in its covariance so that
``h = h_t / sqrt(c)`` is on the original scale.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import Dataset, ModelConfig, PosteriorDraw
from .errors import DataError, DomainError, NumericalError, RankDeficient
from .kernel import (
    GramMatrix,
    VFactor,
    ard_from_dists,
    coordinate_sq_dists,
    isotropic_from_dists,
    robust_cholesky,
    sq_dists,
)
from .partition import SketchedSubset, full_subset

ADAPT_EVERY = 50


# -- state -------------------------------------------------------------------

@dataclass
class ChainState:
    draw: PosteriorDraw
    rng: np.random.Generator
    config: ModelConfig
    iteration: int = 0
    steps: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    _dists: np.ndarray | None = None
    _gram_key: tuple | None = None
    _gram: GramMatrix | None = None
    _v_key: tuple | None = None
    _v: VFactor | None = None

    def kernel_key(self):
        d = self.draw
        if d.r is not None:
            return ("ard", *np.asarray(d.r, dtype=float).tolist())
        return ("iso", float(d.rho))

    def gram(self, sub):
        key = self.kernel_key()
        if key != self._gram_key:
            self._gram = build_gram(self, sub, rho=self.draw.rho, r=self.draw.r)
            self._gram_key = key
            self._v_key = None
        return self._gram

    def factor(self, sub):
        """V factorization for the current (lambda, kernel) pair, cached."""
        g = self.gram(sub)
        key = (float(self.draw.lam), self._gram_key)
        if key != self._v_key:
            self._v = VFactor(g, self.draw.lam, sub.scale_c)
            self._v_key = key
        return self._v

    def adopt(self, gram=None, v=None):
        """Install a proposal's Gram matrix / factor as the current cache."""
        if gram is not None:
            self._gram = gram
            self._gram_key = self.kernel_key()
        if v is not None:
            self._v = v
            self._v_key = (float(self.draw.lam), self._gram_key)

    def count(self, name, accepted, j=None):
        if j is None:
            self.proposed[name] = self.proposed.get(name, 0) + 1
            self.accepted[name] = self.accepted.get(name, 0) + int(accepted)
        else:
            self.proposed[name][j] += 1
            self.accepted[name][j] += int(accepted)


@dataclass
class ChainOutput:
    """Retained draws of one chain, stacked by parameter."""

    beta: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray
    h: np.ndarray
    rho: np.ndarray | None = None
    r: np.ndarray | None = None
    eta: np.ndarray | None = None
    acceptance: dict = field(default_factory=dict)
    seconds: float = 0.0
    subset: int | None = None
    seed: str = ""
    index: np.ndarray | None = None
    config: ModelConfig | None = None

    def __len__(self):
        return self.sigma2.shape[0]

    @property
    def n_k(self):
        return self.h.shape[1]

    @property
    def kernel_mode(self):
        return "ard" if self.r is not None else "isotropic"

    def draw(self, i):
        return PosteriorDraw(
            beta=self.beta[i],
            sigma2=float(self.sigma2[i]),
            lam=float(self.lam[i]),
            h=self.h[i],
            rho=None if self.rho is None else float(self.rho[i]),
            r=None if self.r is None else self.r[i],
            eta=None if self.eta is None else self.eta[i],
        )

    @property
    def draws(self):
        return [self.draw(i) for i in range(len(self))]


# -- kernel plumbing ---------------------------------------------------------

def _power(cfg, q):
    return cfg.power(q)


def build_gram(state, sub, rho=None, r=None):
    cfg = state.config
    if state._dists is None:
        if cfg.kernel_mode == "isotropic":
            state._dists = sq_dists(sub.z_sub)
        else:
            state._dists = coordinate_sq_dists(sub.z_sub)
    if cfg.kernel_mode == "isotropic":
        k = isotropic_from_dists(state._dists, rho, _power(cfg, sub.q))
    else:
        k = ard_from_dists(state._dists, r)
    if cfg.jitter:
        k.flat[:: k.shape[0] + 1] += cfg.jitter
    return GramMatrix(k, cfg.jitter)


# -- conditionals (shared with tests and diagnostics) ------------------------

def beta_conditional(sub, v):
    """Mean and V_beta of beta | sigma^2, lambda, r, Y (flat prior on beta)."""
    x = sub.x_t
    vinv_x = v.solve(x)
    m = x.T @ vinv_x
    m = 0.5 * (m + m.T)
    try:
        evals = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("X' V^-1 X is not symmetric positive definite") from exc
    if evals[0] <= max(evals[-1], 1e-300) * 1e-12:
        raise RankDeficient(
            f"X' V^-1 X is rank deficient (eigenvalue ratio {evals[0] / max(evals[-1], 1e-300):.2e})"
        )
    v_beta = np.linalg.inv(m)
    v_beta = 0.5 * (v_beta + v_beta.T)
    mean = v_beta @ (vinv_x.T @ sub.y_t)
    return mean, v_beta


def residual(sub, beta):
    if sub.p == 0:
        return np.array(sub.y_t, dtype=float)
    return sub.y_t - sub.x_t @ beta


def wss(sub, v, beta):
    res = residual(sub, beta)
    return v.quad(res)


def sigma2_conditional(sub, v, beta, cfg):
    """(shape, rate) of the Gamma conditional for the error precision."""
    w = wss(sub, v, beta)
    return cfg.alpha_sigma + 0.5 * sub.n_k, cfg.b_sigma + 0.5 * w


def h_conditional(sub, v, beta, sigma2):
    """Mean and covariance of h | beta, sigma^2, lambda, r on the original scale."""
    c = sub.scale_c
    res = residual(sub, beta)
    mean_t = res - c * v.solve(res)           # lambda K_t V^-1 res
    a = np.eye(sub.n_k) - c * v.inverse()     # lambda K_t V^-1
    cov_t = sigma2 * c * a
    root = math.sqrt(c)
    return mean_t / root, 0.5 * (cov_t + cov_t.T) / c


def log_marginal(v, res, sigma2):
    """log N(res; 0, sigma^2 V) up to the -(n/2) log(2 pi sigma^2) constant."""
    w = v.quad(res)
    if not np.isfinite(w):
        return -np.inf
    return -0.5 * v.logdet - 0.5 * w / sigma2


def gamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return shape * math.log(rate) - special.gammaln(shape) + (shape - 1) * math.log(x) - rate * x


def log_lambda_target(lam, state, sub, gram=None):
    """Unnormalized log f(lambda | beta, sigma^2, r, Y)."""
    cfg = state.config
    if not lam > 0 or not np.isfinite(lam):
        return -np.inf
    g = state.gram(sub) if gram is None else gram
    try:
        v = VFactor(g, lam, sub.scale_c)
    except NumericalError:
        return -np.inf
    res = residual(sub, state.draw.beta)
    return log_marginal(v, res, state.draw.sigma2) + gamma_logpdf(lam, cfg.a_lambda, cfg.b_lambda)


# -- Gibbs steps ------------------------------------------------------------

def sample_beta(state, sub, v):
    if sub.p == 0:
        return np.zeros(0)
    mean, v_beta = beta_conditional(sub, v)
    chol = np.linalg.cholesky(state.draw.sigma2 * v_beta)
    return mean + chol @ state.rng.standard_normal(sub.p)


def sample_sigma2(state, sub, v):
    cfg = state.config
    if sub.n_k == 0:
        shape, rate = cfg.alpha_sigma, cfg.b_sigma
    else:
        shape, rate = sigma2_conditional(sub, v, state.draw.beta, cfg)
    if not np.isfinite(rate):
        raise NumericalError("non-finite weighted sum of squares")
    g = state.rng.gamma(shape, 1.0 / rate)
    if cfg.sigma2_literal_gamma:
        return max(g, np.finfo(float).tiny)
    return 1.0 / max(g, np.finfo(float).tiny)


def sample_h(state, sub, v):
    mean, cov = h_conditional(sub, v, state.draw.beta, state.draw.sigma2)
    chol = robust_cholesky(cov, what="h covariance")
    return mean + chol @ state.rng.standard_normal(sub.n_k)


# -- Metropolis-Hastings steps ----------------------------------------------

def mh_lambda(state, sub):
    """One log-scale random-walk step on lambda; returns (lambda, accepted)."""
    lam = state.draw.lam
    step = state.steps.get("lambda", state.config.step_init)
    xi = state.rng.standard_normal()
    log_u = math.log(max(state.rng.uniform(), 1e-300))
    prop = _walk(lam, step, xi)
    cfg = state.config
    res = residual(sub, state.draw.beta)
    s2 = state.draw.sigma2
    cur = log_marginal(state.factor(sub), res, s2) + gamma_logpdf(lam, cfg.a_lambda, cfg.b_lambda)
    v_new = None
    new = -np.inf
    if np.isfinite(prop) and prop > 0:
        try:
            v_new = VFactor(state.gram(sub), prop, sub.scale_c)
            new = log_marginal(v_new, res, s2) + gamma_logpdf(prop, cfg.a_lambda, cfg.b_lambda)
        except NumericalError:
            v_new = None
    log_alpha = new - cur + math.log(prop) - math.log(lam) if np.isfinite(new) else -np.inf
    accepted = bool(log_u < log_alpha)
    state.count("lambda", accepted)
    if accepted:
        state.draw.lam = prop
        state.adopt(v=v_new)
    return state.draw.lam, accepted


def _log_kernel_target(state, sub, gram):
    try:
        v = VFactor(gram, state.draw.lam, sub.scale_c)
    except NumericalError:
        return -np.inf, None
    return log_marginal(v, residual(sub, state.draw.beta), state.draw.sigma2), v


def mh_rho(state, sub):
    """Log-scale random walk on the isotropic bandwidth under its Gamma prior."""
    cfg = state.config
    rho = state.draw.rho
    step = state.steps.get("rho", cfg.step_init)
    xi = state.rng.standard_normal()
    log_u = math.log(max(state.rng.uniform(), 1e-300))
    prop = _walk(rho, step, xi)
    if not 0.0 < prop < math.inf:
        state.count("rho", False)
        return rho, False
    cur_ll = log_marginal(state.factor(sub), residual(sub, state.draw.beta), state.draw.sigma2)
    g_new = build_gram(state, sub, rho=prop)
    new_ll, v_new = _log_kernel_target(state, sub, g_new)
    log_alpha = (
        new_ll - cur_ll
        + gamma_logpdf(prop, cfg.rho_shape, cfg.rho_rate)
        - gamma_logpdf(rho, cfg.rho_shape, cfg.rho_rate)
        + math.log(prop) - math.log(rho)
    )
    accepted = bool(np.isfinite(new_ll) and log_u < log_alpha)
    state.count("rho", accepted)
    if accepted:
        state.draw.rho = prop
        state.adopt(gram=g_new, v=v_new)
    return state.draw.rho, accepted


def _walk(value, step, xi):
    """value * exp(step * xi), or inf when that overflows (the move is then rejected)."""
    e = step * xi
    return value * math.exp(e) if e < 700.0 else math.inf


def _safe_log(p):
    return math.log(p) if p > 0 else -np.inf


def mh_r(state, sub, j):
    """Spike-and-slab move for exposure j; returns (r_j, eta_j, accepted).

    Half of the proposals toggle eta_j (a new slab value comes from the slab
    prior, so its density cancels); the other half random-walk log r_j when
    eta_j = 1 and are null moves when eta_j = 0.
    """
    cfg = state.config
    d = state.draw
    rng = state.rng
    pi = cfg.pi_vector(sub.q)[j]
    toggle = rng.uniform() < 0.5
    slab_value = rng.gamma(cfg.slab_shape, 1.0 / cfg.slab_rate)
    xi = rng.standard_normal()
    log_u = math.log(max(rng.uniform(), 1e-300))

    r_old = float(d.r[j])
    eta_old = int(d.eta[j])
    if toggle:
        if eta_old:
            r_new, eta_new = 0.0, 0
            log_prior = _safe_log(1 - pi) - _safe_log(pi)
        else:
            r_new, eta_new = float(slab_value), 1
            log_prior = _safe_log(pi) - _safe_log(1 - pi)
        if not np.isfinite(log_prior) and log_prior < 0:
            state.count("r", False, j)
            return r_old, eta_old, False
    elif eta_old:
        step = state.steps["r"][j]
        r_new, eta_new = _walk(r_old, step, xi), 1
        if not 0.0 < r_new < math.inf:
            state.count("r", False, j)
            state.count("r_walk", False, j)
            return r_old, eta_old, False
        log_prior = (
            gamma_logpdf(r_new, cfg.slab_shape, cfg.slab_rate)
            - gamma_logpdf(r_old, cfg.slab_shape, cfg.slab_rate)
            + math.log(r_new) - math.log(r_old)
        )
    else:
        return r_old, eta_old, False

    r_prop = np.array(d.r, dtype=float)
    r_prop[j] = r_new
    cur_ll = log_marginal(state.factor(sub), residual(sub, d.beta), d.sigma2)
    g_new = build_gram(state, sub, r=r_prop)
    new_ll, v_new = _log_kernel_target(state, sub, g_new)
    log_alpha = new_ll - cur_ll + log_prior
    accepted = bool(np.isfinite(new_ll) and log_u < log_alpha)
    state.count("r", accepted, j)
    if not toggle:
        state.count("r_walk", accepted, j)
    if accepted:
        d.r = r_prop
        eta = np.array(d.eta)
        eta[j] = eta_new
        d.eta = eta
        state.adopt(gram=g_new, v=v_new)
    return float(d.r[j]), int(d.eta[j]), accepted


# -- driver -------------------------------------------------------------------

def _as_subset(data):
    if isinstance(data, SketchedSubset):
        return data
    if isinstance(data, Dataset):
        return full_subset(data)
    raise TypeError(f"expected Dataset or SketchedSubset, got {type(data).__name__}")


def init_state(sub, cfg, rng, init=None):
    """Least-squares beta, residual variance, lambda = 1, prior-mean kernel scales."""
    c = sub.scale_c
    if sub.p:
        beta, *_ = np.linalg.lstsq(sub.x_t, sub.y_t, rcond=None)
    else:
        beta = np.zeros(0)
    res = residual(sub, beta)
    s2 = float(np.mean(res ** 2)) / c
    if not s2 > 0:
        s2 = 1.0
    rho = r = eta = None
    if cfg.kernel_mode == "isotropic":
        rho = cfg.rho_shape / cfg.rho_rate
    else:
        pis = cfg.pi_vector(sub.q)
        eta = (rng.uniform(size=sub.q) < pis).astype(int)
        r = eta * (cfg.slab_shape / cfg.slab_rate)
    draw = PosteriorDraw(beta=beta, sigma2=s2, lam=1.0, h=np.zeros(sub.n_k), rho=rho, r=r, eta=eta)
    if init:
        for key, value in init.items():
            if key in ("r", "eta", "beta", "h"):
                value = np.array(value, dtype=float if key != "eta" else int)
            setattr(draw, key, value)
    draw.check()
    state = ChainState(draw=draw, rng=rng, config=cfg)
    state.steps = {"lambda": cfg.step_init, "rho": cfg.step_init,
                   "r": np.full(sub.q, cfg.step_init)}
    state.accepted = {"lambda": 0, "rho": 0, "r": np.zeros(sub.q, dtype=int),
                      "r_walk": np.zeros(sub.q, dtype=int)}
    state.proposed = {"lambda": 0, "rho": 0, "r": np.zeros(sub.q, dtype=int),
                      "r_walk": np.zeros(sub.q, dtype=int)}
    return state


def _adapt(state, snapshot, target):
    """Scale each proposal step toward the target acceptance rate."""
    for name in ("lambda", "rho"):
        n_prop = state.proposed[name] - snapshot[0][name]
        if n_prop:
            rate = (state.accepted[name] - snapshot[1][name]) / n_prop
            state.steps[name] *= math.exp(rate - target)
    n_prop = state.proposed["r_walk"] - snapshot[0]["r_walk"]
    rate = np.where(n_prop > 0, (state.accepted["r_walk"] - snapshot[1]["r_walk"]) / np.maximum(n_prop, 1), target)
    state.steps["r"] = state.steps["r"] * np.exp(rate - target)


def _snapshot(state):
    prop = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in state.proposed.items()}
    acc = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in state.accepted.items()}
    return prop, acc


def seed_label(seed):
    if isinstance(seed, np.random.SeedSequence):
        key = ".".join(str(s) for s in seed.spawn_key)
        return f"{seed.entropy}" + (f"/{key}" if key else "")
    return str(seed)


def run_chain(data, config: ModelConfig, seed, subset=None, freeze=(), init=None) -> ChainOutput:
    """Run one chain and return its post-burn-in, thinned draws.

    ``freeze`` may contain "beta", "sigma2", "lambda" and "kernel" to hold
    those blocks at their initial values (``init`` overrides them).
    The output is a deterministic function of (data, config, seed).
    """
    sub = _as_subset(data)
    cfg = config
    if sub.n_k < 2:
        raise DataError(f"a chain needs at least 2 observations, got {sub.n_k}")
    if cfg.kernel_mode == "ard":
        cfg.pi_vector(sub.q)
    freeze = set(freeze)
    unknown = freeze - {"beta", "sigma2", "lambda", "kernel"}
    if unknown:
        raise DomainError(f"cannot freeze {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    state = init_state(sub, cfg, rng, init)
    n_keep = cfg.n_keep
    p, q, nk = sub.p, sub.q, sub.n_k
    out_beta = np.empty((n_keep, p))
    out_s2 = np.empty(n_keep)
    out_lam = np.empty(n_keep)
    out_h = np.empty((n_keep, nk))
    iso = cfg.kernel_mode == "isotropic"
    out_rho = np.empty(n_keep) if iso else None
    out_r = None if iso else np.empty((n_keep, q))
    out_eta = None if iso else np.empty((n_keep, q), dtype=int)

    snap = _snapshot(state)
    post = snap if cfg.burnin == 0 else None
    kept = 0
    for it in range(cfg.iters):
        state.iteration = it
        try:
            v = state.factor(sub)
            if "beta" not in freeze:
                state.draw.beta = sample_beta(state, sub, v)
            if "sigma2" not in freeze:
                state.draw.sigma2 = sample_sigma2(state, sub, v)
            if "lambda" not in freeze:
                mh_lambda(state, sub)
            if "kernel" not in freeze:
                if iso:
                    mh_rho(state, sub)
                else:
                    for j in range(q):
                        mh_r(state, sub, j)
            done = it + 1
            if done > cfg.burnin and (done - cfg.burnin) % cfg.thin == 0:
                state.draw.h = sample_h(state, sub, state.factor(sub))
                out_beta[kept] = state.draw.beta
                out_s2[kept] = state.draw.sigma2
                out_lam[kept] = state.draw.lam
                out_h[kept] = state.draw.h
                if iso:
                    out_rho[kept] = state.draw.rho
                else:
                    out_r[kept] = state.draw.r
                    out_eta[kept] = state.draw.eta
                kept += 1
        except NumericalError as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        if done <= cfg.burnin and done % ADAPT_EVERY == 0:
            _adapt(state, snap, cfg.target_accept)
            snap = _snapshot(state)
        if done == cfg.burnin:
            post = _snapshot(state)
    acceptance = {}
    for name in ("lambda", "rho"):
        n_prop = state.proposed[name] - post[0][name]
        if n_prop:
            acceptance[name] = (state.accepted[name] - post[1][name]) / n_prop
    n_prop = state.proposed["r"] - post[0]["r"]
    if n_prop.sum():
        acceptance["r"] = (state.accepted["r"] - post[1]["r"]) / np.maximum(n_prop, 1)
    acceptance["steps"] = {"lambda": state.steps["lambda"], "rho": state.steps["rho"],
                           "r": state.steps["r"].tolist()}
    return ChainOutput(
        beta=out_beta, sigma2=out_s2, lam=out_lam, h=out_h,
        rho=out_rho, r=out_r, eta=out_eta,
        acceptance=acceptance,
        seconds=time.perf_counter() - t0,
        subset=subset if subset is not None else sub.k,
        seed=seed_label(seed),
        index=np.asarray(sub.index),
        config=cfg,
    )


# -- draw files --------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def draw_columns(out: ChainOutput):
    p = out.beta.shape[1]
    cols = ["draw"] + [f"beta_{j + 1}" for j in range(p)] + ["sigma2", "lambda"]
    if out.r is None:
        cols.append("rho")
    else:
        q = out.r.shape[1]
        cols += [f"r_{j + 1}" for j in range(q)] + [f"eta_{j + 1}" for j in range(q)]
    cols += [f"h_{i + 1}" for i in range(out.n_k)]
    return cols


def write_draws(out: ChainOutput, path):
    subset = "FULL" if out.subset is None else out.subset
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# subset={subset} n_k={out.n_k} seed={out.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(draw_columns(out))
        for i in range(len(out)):
            row = [str(i + 1)] + [_fmt(b) for b in out.beta[i]]
            row += [_fmt(out.sigma2[i]), _fmt(out.lam[i])]
            if out.r is None:
                row.append(_fmt(out.rho[i]))
            else:
                row += [_fmt(v) for v in out.r[i]] + [str(int(e)) for e in out.eta[i]]
            row += [_fmt(v) for v in out.h[i]]
            w.writerow(row)


def read_draws(path, config=None, index=None) -> ChainOutput:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise DataError(f"{path}: missing '# subset=...' comment line")
        meta = dict(tok.split("=", 1) for tok in first[1:].split())
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    arr = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    col = {name: i for i, name in enumerate(header)}

    def block(prefix):
        idx = [i for name, i in col.items() if name.startswith(prefix + "_")]
        return arr[:, idx]

    subset = None if meta.get("subset") == "FULL" else int(meta["subset"])
    ard = "r_1" in col
    return ChainOutput(
        beta=block("beta"),
        sigma2=arr[:, col["sigma2"]],
        lam=arr[:, col["lambda"]],
        h=block("h"),
        rho=None if ard else arr[:, col["rho"]],
        r=block("r") if ard else None,
        eta=block("eta").astype(int) if ard else None,
        subset=subset,
        seed=meta.get("seed", ""),
        index=index,
        config=config,
    )
