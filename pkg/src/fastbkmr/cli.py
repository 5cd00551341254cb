"""``fastbkmr`` command line: fit, simulate, combine, surface."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict

import numpy as np

from . import __version__
from . import config as cfgmod
from .combine import combine, write_combined
from .data import ModelConfig, load_csv, standardize, with_overrides
from .errors import DataError, FastBKMRError, UsageError
from .partition import read_partition, sketch, split_count, write_partition
from .pipeline import FitResult, default_jobs, fit_dataset, training_blocks
from .sampler import read_draws, write_draws
from .simulation import RESULT_COLUMNS, SimConfig, cell_seed, run_experiment, sweep_config, write_results
from .summary import (inclusion_probabilities, surface_bivariate, surface_univariate,
                      weighted_quantile, write_surface)

log = logging.getLogger("fastbkmr")

PAPER_SCALE_REPS = 300


# -- helpers -------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _float_list(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected a comma-separated list of numbers, got {text!r}") from None


def _check_t(t):
    if not 0.0 <= t <= 0.7:
        raise UsageError(f"splits exponent t={t} outside [0, 0.7]")


def _exposure_index(token, names):
    token = token.strip()
    if token in names:
        return list(names).index(token)
    try:
        j = int(token) - 1
    except ValueError:
        raise UsageError(f"unknown exposure {token!r}; known: {', '.join(names)}") from None
    if not 0 <= j < len(names):
        raise UsageError(f"exposure index {token} outside 1..{len(names)}")
    return j


def _model_overrides(args):
    kw = {}
    for name in ("iters", "burnin", "thin", "kernel_mode"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return kw


# -- fit -------------------------------------------------------------------------

def _resolve_fit(args):
    model_kw, run = ({}, {}) if args.config is None else cfgmod.load(args.config)
    settings = cfgmod.run_defaults()
    settings.update(run)
    for key, attr in (("splits_exponent", "splits_exponent"), ("seed", "seed"),
                      ("method", "method"), ("epsilon", "epsilon")):
        v = getattr(args, attr, None)
        if v is not None:
            settings[key] = v
    _check_t(settings["splits_exponent"])
    if settings["method"] not in ("barycenter", "median"):
        raise UsageError(f"unknown method {settings['method']!r}")
    if settings["missing"] not in ("error", "drop"):
        raise UsageError(f"unknown missing-data policy {settings['missing']!r}")
    if not settings["outcome"] or not settings["exposures"]:
        raise UsageError("config must set 'outcome' and 'exposures'")
    model_kw.update(_model_overrides(args))
    return ModelConfig(**model_kw), settings


def _load_dataset(path, settings):
    schema = {k: settings[k] for k in ("outcome", "confounders", "exposures")}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds = load_csv(path, schema, policy=settings["missing"])
    for w in caught:
        log.warning("%s", w.message)
    scaling = None
    if settings["standardize"] or settings["standardize_confounders"]:
        std, rec = standardize(ds, confounders=settings["standardize_confounders"])
        if settings["standardize"]:
            ds, scaling = std, rec
        else:
            ds = type(ds)(y=ds.y, x=std.x, z=ds.z, x_names=ds.x_names,
                          z_names=ds.z_names, y_name=ds.y_name)
    return ds, scaling


def _summary_rows(combined):
    rows = []
    for name, cp in combined.items():
        if name == "h" or cp.atoms.ndim != 1:
            continue
        q = cp.quantile([0.025, 0.5, 0.975])
        rows.append([name, cp.mean(), cp.sd(), *q])
    return rows


def _write_summary(directory, fit: FitResult, ds, scaling, settings):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "posterior.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["functional", "mean", "sd", "q025", "q50", "q975"])
        for row in _summary_rows(fit.combined):
            w.writerow([row[0], *[repr(float(v)) for v in row[1:]]])
    if fit.config.kernel_mode == "ard":
        pips = inclusion_probabilities(fit.combined)
        with open(os.path.join(directory, "pip.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["exposure", "pip"])
            for name, p in zip(ds.z_names, pips):
                w.writerow([name, repr(float(p))])
    if fit.h_hat is not None:
        with open(os.path.join(directory, "h_hat.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "h_hat"])
            for i, v in enumerate(fit.h_hat):
                w.writerow([i, repr(float(v))])
    for token in settings["surfaces"]:
        j = _exposure_index(token, ds.z_names)
        surf = surface_univariate(fit.h_at, ds.z, j, fix=settings["fix"], n_grid=settings["grid"])
        _save_surface(surf, os.path.join(directory, f"surface_{ds.z_names[j]}.csv"), ds, scaling)


def _save_surface(surf, path, ds, scaling):
    if scaling is not None:
        g = surf.grid if surf.grid.ndim == 2 else surf.grid[:, None]
        raw = np.column_stack([scaling.to_raw(g[:, c], e) for c, e in enumerate(surf.exposures)])
        surf.grid = raw if surf.grid.ndim == 2 else raw[:, 0]
    write_surface(surf, path, [ds.z_names[e] for e in surf.exposures])


def cmd_fit(args):
    cfg, settings = _resolve_fit(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    failed_marker = os.path.join(out, "FAILED")
    if os.path.exists(failed_marker):
        os.remove(failed_marker)
    manifest = {
        "command": "fit",
        "version": __version__,
        "created": _now(),
        "status": "running",
        "data": {"path": os.path.abspath(args.data), "sha256": _sha256(args.data)},
        "settings": settings,
        "config": asdict(cfg),
        "master_seed": settings["seed"],
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    try:
        ds, scaling = _load_dataset(args.data, settings)
        K = split_count(ds.n, settings["splits_exponent"], settings["min_subset_size"])
        fit = fit_dataset(ds, cfg, K, settings["seed"], jobs=args.jobs, method=settings["method"],
                          h_grid="train", epsilon=settings["epsilon"])
        write_partition(fit.plan, os.path.join(out, "partition.csv"))
        draws_dir = os.path.join(out, "draws")
        os.makedirs(draws_dir, exist_ok=True)
        for k, o in enumerate(fit.outputs):
            write_draws(o, os.path.join(draws_dir, f"subset_{k}.csv"))
        write_combined(fit.combined, os.path.join(out, "combined"))
        _write_summary(os.path.join(out, "summary"), fit, ds, scaling, settings)
    except FastBKMRError as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _write_json(os.path.join(out, "manifest.json"), manifest)
        with open(failed_marker, "w", encoding="utf-8") as fh:
            fh.write(manifest["error"] + "\n")
        raise
    manifest.update(
        status="complete",
        n=ds.n,
        K=K,
        subset_seeds=[o.seed for o in fit.outputs],
        acceptance=[o.acceptance for o in fit.outputs],
        scaling=None if scaling is None else {"names": scaling.names, "mean": scaling.mean,
                                              "sd": scaling.sd},
        seconds=fit.seconds,
    )
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"fit complete: n={ds.n} K={K} -> {out}")
    return 0


# -- reloading an artifact directory ----------------------------------------------

def load_artifacts(directory):
    """Rebuild (dataset, scaling, FitResult) from a completed fit directory."""
    mpath = os.path.join(directory, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise UsageError(f"not an artifact directory: {exc}") from None
    if manifest.get("status") != "complete":
        raise DataError(f"{directory}: fit did not complete (status={manifest.get('status')})")
    data = manifest["data"]
    if _sha256(data["path"]) != data["sha256"]:
        raise DataError(f"{data['path']} changed since the fit")
    settings = manifest["settings"]
    ds, scaling = _load_dataset(data["path"], settings)
    cfg_kw = dict(manifest["config"])
    if isinstance(cfg_kw.get("pi"), list):
        cfg_kw["pi"] = tuple(cfg_kw["pi"])
    cfg = ModelConfig(**cfg_kw)
    plan = read_partition(os.path.join(directory, "partition.csv"))
    subsets = [sketch(ds, plan, k, temper=cfg.temper) for k in range(plan.K)]
    outputs = [read_draws(os.path.join(directory, "draws", f"subset_{k}.csv"), cfg, plan.index_sets[k])
               for k in range(plan.K)]
    fit = FitResult(plan=plan, subsets=subsets, outputs=outputs, combined={}, config=cfg,
                    method=settings["method"])
    return manifest, ds, scaling, fit


def cmd_combine(args):
    manifest, ds, _, fit = load_artifacts(args.artifacts)
    method = args.method or manifest["settings"]["method"]
    eps = args.epsilon if args.epsilon is not None else manifest["settings"].get("epsilon")
    blocks = training_blocks(ds, fit.plan, fit.subsets, fit.outputs, fit.config)
    combined = combine(fit.outputs, method=method, h_blocks=blocks, epsilon=eps)
    out = args.out or os.path.join(args.artifacts, f"combined_{method}")
    write_combined(combined, out)
    print(f"combined ({method}) -> {out}")
    return 0


def cmd_surface(args):
    manifest, ds, scaling, fit = load_artifacts(args.artifacts)
    if args.method:
        fit.method = args.method
    idx = [_exposure_index(t, ds.z_names) for t in args.exposures.split(",") if t.strip()]
    if args.type == "uni":
        if len(idx) != 1:
            raise UsageError("--type uni takes exactly one exposure")
        surf = surface_univariate(fit.h_at, ds.z, idx[0], fix=args.fix, n_grid=args.grid)
    else:
        if len(idx) != 2 or idx[0] == idx[1]:
            raise UsageError("--type bi takes two distinct exposures")
        surf = surface_bivariate(fit.h_at, ds.z, idx[0], idx[1], fix=args.fix, n_grid=args.grid)
    names = "_".join(ds.z_names[e] for e in surf.exposures)
    out = args.out or os.path.join(args.artifacts, "summary", f"surface_{args.type}_{names}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    _save_surface(surf, out, ds, scaling)
    print(f"surface -> {out}")
    return 0


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args):
    n_list = [int(v) for v in _float_list(args.n_list, "--n-list")]
    t_list = _float_list(args.t_list, "--t-list")
    if not n_list or not t_list:
        raise UsageError("--n-list and --t-list must be non-empty")
    for t in t_list:
        _check_t(t)
    for n in n_list:
        if n < 64:
            raise UsageError(f"n={n}: simulation needs n >= 64")
    reps = args.reps if args.reps is not None else (PAPER_SCALE_REPS if args.paper_scale else 10)
    if reps < 1:
        raise UsageError("--reps must be >= 1")
    base = sweep_config(args.paper_scale, iters=args.iters, burnin=args.burnin, thin=args.thin)
    sim_kw = {"confounder_sd_mode": args.confounder_sd_mode}
    SimConfig(n=n_list[0], t=t_list[0], replications=reps, **sim_kw)  # validates the grid
    cells = []
    for n in n_list:
        for t in t_list:
            for rep in range(reps):
                d, f = cell_seed(args.seed, n, t, rep)
                cells.append({"n": n, "t": t, "rep": rep, "data_spawn_key": list(d.spawn_key),
                              "fit_spawn_key": list(f.spawn_key)})
    manifest = {
        "command": "simulate",
        "version": __version__,
        "created": _now(),
        "master_seed": args.seed,
        "paper_scale": args.paper_scale,
        "reps": reps,
        "iters": base.iters,
        "burnin": base.burnin,
        "thin": base.thin,
        "method": args.method,
        "config": asdict(base),
        "cells": cells,
        "columns": RESULT_COLUMNS,
    }
    mpath = args.manifest or f"{args.out}.manifest.json"
    _write_json(mpath, manifest)
    if args.dry_run:
        print(f"dry run: {len(cells)} cells planned -> {mpath}")
        return 0

    def progress(row):
        log.info("n=%s t=%s rep=%s K=%s r2=%s status=%s", row["n"], row["t"], row["rep"],
                 row["K"], row["r2"], row["status"])

    rows = run_experiment(n_list, t_list, reps, base, master_seed=args.seed, jobs=args.jobs,
                          method=args.method, sim_kw=sim_kw, progress=progress)
    write_results(rows, args.out)
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"simulate: {len(rows)} cells ({bad} failed) -> {args.out}")
    return 0


# -- argument parsing -------------------------------------------------------------

def _jobs(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(
        prog="fastbkmr",
        description="Divide-and-conquer kernel machine regression with Wasserstein aggregation.",
        epilog=f"--jobs defaults to ${'{'}FASTBKMR_JOBS{'}'} or the number of cores.\n"
               "Exit codes: 0 ok, 2 usage, 3 data, 4 numerical.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"fastbkmr {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--jobs", type=_jobs, default=None, help="worker processes")
        sp.add_argument("--method", choices=["barycenter", "median"], default=None)
        sp.add_argument("--epsilon", type=float, default=None,
                        help="entropic regularization for joint combination")

    f = sub.add_parser("fit", help="fit a dataset", epilog=cfgmod.keys_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    f.add_argument("--data", required=True)
    f.add_argument("--config", default=None)
    f.add_argument("--out", default="fastbkmr_out")
    f.add_argument("--splits-exponent", type=float, default=None, help="t in K = round(n^t)")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--iters", type=int, default=None)
    f.add_argument("--burnin", type=int, default=None)
    f.add_argument("--thin", type=int, default=None)
    f.add_argument("--kernel-mode", choices=["isotropic", "ard"], default=None)
    common(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run the synthetic (n, t) sweep")
    s.add_argument("--n-list", default="512")
    s.add_argument("--t-list", default="0,0.5")
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--paper-scale", action="store_true",
                   help="300 replications and 10^4 iterations")
    s.add_argument("--iters", type=int, default=None)
    s.add_argument("--burnin", type=int, default=None)
    s.add_argument("--thin", type=int, default=None)
    s.add_argument("--confounder-sd-mode", action="store_true",
                   help="read the confounder noise scale 2 as an SD instead of a variance")
    s.add_argument("--out", default="simulation.csv")
    s.add_argument("--manifest", default=None)
    s.add_argument("--dry-run", action="store_true", help="write the manifest only")
    common(s)
    s.set_defaults(func=cmd_simulate, method="barycenter")

    c = sub.add_parser("combine", help="re-combine stored subset draws")
    c.add_argument("--artifacts", required=True)
    c.add_argument("--out", default=None)
    common(c)
    c.set_defaults(func=cmd_combine)

    u = sub.add_parser("surface", help="exposure-response surface from a fit")
    u.add_argument("--artifacts", required=True)
    u.add_argument("--type", choices=["uni", "bi"], default="uni")
    u.add_argument("--exposures", required=True, help="name or 1-based index; two for bi")
    u.add_argument("--grid", type=int, default=21)
    u.add_argument("--fix", type=float, default=0.5)
    u.add_argument("--out", default=None)
    common(u)
    u.set_defaults(func=cmd_surface)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is None:
        args.jobs = default_jobs()
    try:
        if getattr(args, "grid", 21) < 2:
            raise UsageError("--grid must be >= 2")
        if not 0.0 <= getattr(args, "fix", 0.5) <= 1.0:
            raise UsageError("--fix must lie in [0, 1]")
        return args.func(args)
    except FastBKMRError as exc:
        print(f"fastbkmr: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"fastbkmr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
