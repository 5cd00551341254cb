"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored; list values are comma-separated.
Unknown keys are an error so typos do not silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import fields

from .data import ModelConfig
from .errors import UsageError

# run-level keys -> (parser, default, help)
RUN_KEYS = {
    "outcome": (str, None, "outcome column name (required for fit)"),
    "confounders": (list, [], "comma-separated confounder columns"),
    "exposures": (list, None, "comma-separated exposure columns (required for fit)"),
    "missing": (str, "error", "missing-data policy: error | drop"),
    "standardize": (bool, True, "center/scale exposures to unit SD before fitting"),
    "standardize_confounders": (bool, False, "also center/scale confounders"),
    "splits_exponent": (float, 0.0, "t in K = round(n^t), 0 <= t <= 0.7"),
    "min_subset_size": (int, 32, "smallest subset size accepted when K > 1"),
    "seed": (int, 0, "master seed"),
    "method": (str, "barycenter", "combination rule: barycenter | median"),
    "epsilon": (float, None, "entropic regularization for joint (Sinkhorn) combination"),
    "surfaces": (list, [], "exposures that get a univariate exposure-response curve"),
    "grid": (int, 21, "grid points per surface axis"),
    "fix": (float, 0.5, "quantile at which non-plotted exposures are held"),
}

_MODEL_HELP = {
    "kernel_mode": "isotropic | ard",
    "a_lambda": "Gamma shape of the lambda prior",
    "b_lambda": "Gamma rate of the lambda prior",
    "alpha_sigma": "Gamma shape of the error-precision prior",
    "b_sigma": "Gamma rate of the error-precision prior",
    "rho_shape": "Gamma shape of the isotropic bandwidth prior",
    "rho_rate": "Gamma rate of the isotropic bandwidth prior",
    "rho_power": "exponent of rho in the isotropic kernel (default 2q)",
    "pi": "prior inclusion probability (scalar or one per exposure)",
    "slab_shape": "Gamma shape of the slab for r_j",
    "slab_rate": "Gamma rate of the slab for r_j",
    "temper": "sqrt(K) sketch scaling of subset data",
    "iters": "total MCMC iterations",
    "burnin": "discarded iterations",
    "thin": "keep every thin-th post burn-in draw",
    "sigma2_literal_gamma": "draw sigma^2 itself from the Gamma conditional",
    "jitter": "diagonal jitter added to Gram matrices",
    "step_init": "initial log-scale MH step",
    "target_accept": "MH acceptance rate targeted during burn-in",
}


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _model_fields():
    return {f.name: f for f in fields(ModelConfig)}


def _coerce_model(name, raw):
    default = ModelConfig.__dataclass_fields__[name].default
    if name == "pi":
        vals = [float(v) for v in _split(raw)]
        return vals[0] if len(vals) == 1 else tuple(vals)
    if name == "rho_power":
        return None if raw.strip().lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        return parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def _split(raw):
    return [v.strip() for v in raw.split(",") if v.strip()]


def _coerce_run(name, raw):
    kind = RUN_KEYS[name][0]
    if kind is list:
        return _split(raw)
    if kind is bool:
        return parse_bool(raw)
    if raw.strip().lower() == "none":
        return None
    return kind(raw.strip())


def parse_text(text, source="<config>"):
    """Return (model overrides, run settings) from config text."""
    model, run = {}, {}
    mfields = _model_fields()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            if key in mfields:
                model[key] = _coerce_model(key, raw)
            elif key in RUN_KEYS:
                run[key] = _coerce_run(key, raw)
            else:
                raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise UsageError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return model, run


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


def run_defaults():
    return {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in RUN_KEYS.items()}


def keys_help():
    """Plain-text listing of every config key, for ``--help``."""
    lines = ["config keys (key = value; lists comma-separated):"]
    for k, (_, default, text) in RUN_KEYS.items():
        lines.append(f"  {k:24s} {text} [default: {default}]")
    for k, f in _model_fields().items():
        lines.append(f"  {k:24s} {_MODEL_HELP.get(k, '')} [default: {f.default}]")
    return "\n".join(lines)
