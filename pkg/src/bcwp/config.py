"""TOML experiment configs: schema validation, defaults and object builders.

Every section has a fixed set of keys with defaults.  Unknown keys are
rejected, types are checked, and the resolved config (defaults included)
is what gets echoed into reports.
"""
from __future__ import annotations

import copy
import math
from fractions import Fraction

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import geometry as geo
from .exponents import as_number

COMMANDS = ("verify", "classify", "eigen", "kappa", "solve-sc", "sweep", "schwarzschild")


class ConfigError(ValueError):
    """Schema violation; the message starts with the dotted key path."""


# default values double as type declarations; None means "optional"
_FACTOR = {
    "type": "torus",
    "n": [16],
    "length": 2.0 * math.pi,
    "n_theta": 32,
    "n_phi": 16,
    "radius": 1.0,
}
_MODE = {"axis": 0, "wave": 1, "amp": 0.0, "kind": "sin"}
_FIELD = {"constant": 1.0, "modes": [], "random_modes": 0, "random_amp": 0.1}

SCHEMA = {
    "command": "verify",
    "seed": 0,
    "output": {"dir": "bcwp-out", "prefix": "run"},
    "base": {"scheme": "fd2", "factors": [], "S_B": None},
    "fiber": {"k": 1, "kind": "flat", "radius": 1.0, "nu": 0.0, "sign": 1, "grid_n": 4},
    "warp": {"mu": None, "psi": _FIELD, "c": None, "w": None},
    "verify": {"ladder": [16, 32, 64], "refine_axes": [0], "ricci": True, "polar_band": 0.7853981633974483},
    "classify": {"m": 3, "k": 1, "mu": "0", "sf_sign": 0,
                 "lattice": {"m": [], "k": [], "mu_min": -5.0, "mu_max": 5.0, "mu_steps": 0},
                 "series": {"m": 0, "k": 0, "mu_min": -1.0, "mu_max": 1.0, "mu_steps": 0}},
    "solver": {"lam": 1.0, "tol": 1e-10, "maxiter": 100000, "p": 0.0, "beta": 1.0},
    "sweep": {"lam_min": 0.0, "lam_max": 1.0, "steps": 11, "bisections": 0},
    "schwarzschild": {"profile": "one", "mass": 0.0, "s_min": 9.0, "s_max": 25.0, "n_s": 32,
                      "y_length": 1.0, "n_y": 8, "sign": -1, "fiber_n": 4},
}

_LIST_ITEMS = {"base.factors": _FACTOR, "warp.psi.modes": _MODE, "warp.c.modes": _MODE,
               "warp.w.modes": _MODE}
_FIELD_KEYS = {"warp.psi", "warp.c", "warp.w"}
_CHOICES = {
    "command": COMMANDS,
    "base.scheme": geo.SCHEMES,
    "base.factors.type": ("torus", "circle", "interval", "sphere2"),
    "fiber.kind": geo.FIBER_KINDS,
    "warp.psi.modes.kind": ("sin", "cos"),
    "warp.c.modes.kind": ("sin", "cos"),
    "warp.w.modes.kind": ("sin", "cos"),
    "schwarzschild.profile": ("one", "schwarzschild"),
}


def _check_type(path, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if path.endswith("mu"):
            return _rational_text(path, value)
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    return value


def _rational_text(path, value):
    """Normalize ``mu``-like entries to exact fraction text such as ``"-1/2"``.

    Floats are read through their decimal representation, so ``0.5`` gives
    ``"1/2"``.
    """
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite, got {value!r}")
        return str(Fraction(repr(value)))
    if isinstance(value, str):
        try:
            return str(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path}: not a rational number: {value!r}") from None
    raise ConfigError(f"{path}: expected a number or fraction string, got {value!r}")


def _merge(schema, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected a table, got {given!r}")
    unknown = sorted(set(given) - set(schema))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown key")
    out = {}
    for key, default in schema.items():
        sub = f"{path}.{key}" if path else key
        if sub in _FIELD_KEYS:
            value = given.get(key, None if default is None else {})
            out[key] = None if value is None else _merge(_FIELD, value, sub)
            if out[key] is not None:
                out[key]["modes"] = [_merge(_MODE, m, f"{sub}.modes[{i}]") for i, m in enumerate(out[key]["modes"])]
                _check_choice(f"{sub}.modes.kind", [m["kind"] for m in out[key]["modes"]], sub)
            continue
        if isinstance(default, dict):
            out[key] = _merge(default, given.get(key, {}), sub)
            continue
        if key not in given:
            out[key] = copy.deepcopy(default)
            continue
        value = given[key]
        if default is None:
            out[key] = _optional(sub, value)
            continue
        out[key] = _check_type(sub, default, value)
        if sub in _LIST_ITEMS:
            out[key] = [_merge(_LIST_ITEMS[sub], item, f"{sub}[{i}]") for i, item in enumerate(value)]
        _check_choice(sub, [out[key]], sub)
    return out


def _optional(path, value):
    if value is None:
        return None
    if path.endswith("mu"):
        return _rational_text(path, value)
    if path == "base.S_B":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _check_choice(path, values, where):
    choices = _CHOICES.get(path)
    if choices is None:
        return
    for v in values:
        if v not in choices:
            raise ConfigError(f"{where}: {v!r} is not one of {', '.join(choices)}")


def resolve(raw):
    """Validate a parsed TOML table and fill every default."""
    cfg = _merge(SCHEMA, raw, "")
    for i, fac in enumerate(cfg["base"]["factors"]):
        _check_choice("base.factors.type", [fac["type"]], f"base.factors[{i}].type")
        if fac["type"] in ("torus", "circle", "interval"):
            if not fac["n"] or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 4 for n in fac["n"]):
                raise ConfigError(f"base.factors[{i}].n: needs integers >= 4, got {fac['n']!r}")
            if fac["type"] == "circle" and len(fac["n"]) != 1:
                raise ConfigError(f"base.factors[{i}].n: a circle has one axis")
        if fac["length"] <= 0 or fac["radius"] <= 0:
            raise ConfigError(f"base.factors[{i}]: length and radius must be positive")
    if cfg["fiber"]["k"] < 0:
        raise ConfigError("fiber.k: must be >= 0")
    if cfg["fiber"]["sign"] not in (1, -1):
        raise ConfigError("fiber.sign: must be 1 or -1")
    if cfg["schwarzschild"]["sign"] not in (1, -1):
        raise ConfigError("schwarzschild.sign: must be 1 or -1")
    if cfg["solver"]["tol"] <= 0 or cfg["solver"]["maxiter"] < 1:
        raise ConfigError("solver: tol must be positive and maxiter >= 1")
    if cfg["sweep"]["steps"] < 0 or cfg["sweep"]["bisections"] < 0:
        raise ConfigError("sweep: steps and bisections must be >= 0")
    if not cfg["verify"]["ladder"] or sorted(cfg["verify"]["ladder"]) != cfg["verify"]["ladder"]:
        raise ConfigError("verify.ladder: needs an increasing list of grid sizes")
    return cfg


def load(path):
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return resolve(raw)


def loads(text):
    return resolve(tomllib.loads(text))


# ---------------------------------------------------------------------------
# builders

def build_base(cfg, n=None, refine_axes=None, scheme=None):
    """Base metric from ``base.factors``; ``n`` replaces the sizes of ``refine_axes``."""
    factors = cfg["base"]["factors"]
    if not factors:
        raise ConfigError("base.factors: at least one factor is required")
    scheme = cfg["base"]["scheme"] if scheme is None else scheme
    metrics = []
    for fac in factors:
        t = fac["type"]
        if t == "sphere2":
            metrics.append(geo.sphere2(fac["n_theta"], fac["n_phi"], fac["radius"]))
        elif t == "interval":
            grid = geo.GridManifold(tuple(geo.Axis(k, geo.INTERVAL, fac["length"]) for k in fac["n"]))
            metrics.append(geo.flat_metric(grid))
        else:
            metrics.append(geo.torus(tuple(fac["n"]), fac["length"]))
    base = metrics[0] if len(metrics) == 1 else geo.product_metric(*metrics)
    grid = base.grid
    if n is not None:
        axes = list(range(grid.dim)) if refine_axes is None else list(refine_axes)
        bad = [a for a in axes if not 0 <= a < grid.dim]
        if bad:
            raise ConfigError(f"verify.refine_axes: axis {bad[0]} out of range for a {grid.dim}-dimensional base")
        new = grid.refined(n, axes)
        base = _rebuild(cfg, new)
    if scheme != base.grid.scheme:
        if scheme == "spectral" and not base.grid.all_periodic:
            raise ConfigError("base.scheme: spectral needs every axis periodic")
        base = geo.MetricField(base.grid.with_scheme(scheme), base.g)
    return base


def _rebuild(cfg, grid):
    """Rebuild the product metric on a refined grid with the same factor layout."""
    metrics, o = [], 0
    for fac in cfg["base"]["factors"]:
        if fac["type"] == "sphere2":
            ax = grid.axes[o:o + 2]
            metrics.append(geo.sphere2(ax[0].n, ax[1].n, fac["radius"]))
            o += 2
        else:
            d = len(fac["n"])
            sub = geo.GridManifold(grid.axes[o:o + d])
            metrics.append(geo.flat_metric(sub))
            o += d
    return metrics[0] if len(metrics) == 1 else geo.product_metric(*metrics)


def build_fiber(cfg):
    f = cfg["fiber"]
    return geo.FiberModel(f["k"], f["kind"], f["radius"], f["nu"], f["sign"])


def build_field(spec, base, seed, path):
    """Positive field ``constant + sum amp * sin/cos(wave * x_axis)`` plus seeded random modes."""
    mesh = base.grid.mesh()
    out = np.full(base.grid.shape, float(spec["constant"]))
    for i, mode in enumerate(spec["modes"]):
        if not 0 <= mode["axis"] < base.grid.dim:
            raise ConfigError(f"{path}.modes[{i}].axis: out of range for a {base.grid.dim}-dimensional base")
        trig = np.sin if mode["kind"] == "sin" else np.cos
        out = out + mode["amp"] * trig(mode["wave"] * mesh[mode["axis"]])
    if spec["random_modes"]:
        rng = np.random.default_rng(seed)
        for _ in range(spec["random_modes"]):
            axis = int(rng.integers(base.grid.dim))
            wave = int(rng.integers(1, 3))
            amp = float(rng.uniform(-1.0, 1.0)) * spec["random_amp"]
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            out = out + amp * np.sin(wave * mesh[axis] + phase)
    if not np.all(np.isfinite(out)) or not np.all(out > 0):
        raise ConfigError(f"{path}: field must be strictly positive (min sample {float(np.min(out)):.6g})")
    return out


def mu_value(cfg, path="warp.mu"):
    text = cfg["warp"]["mu"] if path == "warp.mu" else cfg["classify"]["mu"]
    if text is None:
        raise ConfigError(f"{path}: required for this command")
    return as_number(text)


def override(cfg, assignments):
    """Apply ``key.path=value`` overrides to scalar entries, then revalidate."""
    raw = copy.deepcopy(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"{key}: not a config table")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node or isinstance(node[leaf], (dict, list)):
            raise ConfigError(f"{key}: not a scalar config entry")
        try:
            node[leaf] = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError:
            node[leaf] = text.strip()
    return resolve(raw)
