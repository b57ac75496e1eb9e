"""Experiment configuration: strict TOML schema with materialized defaults.

A config names an experiment ``kind`` and fills a fixed set of sections.
Every key a kind accepts has a default, and the parsed config always holds
all of them, so the resolved config written next to the results is a
complete record of the run.  Unknown sections or keys are rejected.

Minimal OU config::

    kind = "ou"

    [model]
    theta = 2.0
    sigma = 0.5

    [grid]
    T = 1.0
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .chaos import MAX_INDEX_SET_SIZE, index_set_size
from .errors import CapacityError, ConfigurationError

KINDS = ("ou", "gbm", "wick_drift", "heat_spde", "semilinear_spde", "phi41_estimation",
         "heston_extrapolation", "enkf", "sensitivity")
BASIS_KINDS = ("haar", "trig")
CHI0_SHAPES = ("zero", "sin", "const")


# --- value checkers ---------------------------------------------------------
# Each returns the normalized value or raises with the offending key named.

def _fail(key, msg):
    raise ConfigurationError(f"{key}: {msg}")


def _real(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(key, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        _fail(key, "must be finite")
    return v


def real(lo=None, hi=None, strict_lo=False):
    def check(key, v):
        v = _real(key, v)
        if lo is not None and (v <= lo if strict_lo else v < lo):
            _fail(key, f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            _fail(key, f"must be <= {hi}, got {v}")
        return v
    return check


def integer(lo=None, hi=None):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, int):
            _fail(key, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            _fail(key, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            _fail(key, f"must be <= {hi}, got {v}")
        return int(v)
    return check


def choice(options):
    def check(key, v):
        if v not in options:
            _fail(key, f"must be one of {list(options)}, got {v!r}")
        return v
    return check


def boolean(key, v):
    if not isinstance(v, bool):
        _fail(key, f"expected true or false, got {v!r}")
    return v


def string(key, v):
    if not isinstance(v, str) or not v:
        _fail(key, f"expected a non-empty string, got {v!r}")
    return v


def real_list(min_len=1):
    def check(key, v):
        if not isinstance(v, list) or len(v) < min_len:
            _fail(key, f"expected a list of at least {min_len} numbers")
        return [_real(f"{key}[{i}]", x) for i, x in enumerate(v)]
    return check


def int_list(lo=1, ascending=True):
    def check(key, v):
        if not isinstance(v, list) or not v:
            _fail(key, "expected a non-empty list of integers")
        out = [integer(lo)(f"{key}[{i}]", x) for i, x in enumerate(v)]
        if ascending and out != sorted(set(out)):
            _fail(key, "values must be strictly ascending")
        return out
    return check


def interval(key, v):
    if not isinstance(v, list) or len(v) != 2:
        _fail(key, "expected [low, high]")
    lo, hi = real_list(2)(key, v)
    if not lo < hi:
        _fail(key, f"bounds must satisfy low < high, got [{lo}, {hi}]")
    return [lo, hi]


def ridge_value(key, v):
    if v == "auto":
        return v
    return real(0.0)(key, v)


# --- schema -----------------------------------------------------------------

TOP = {
    "seed": (0, integer(0, 2**64 - 1)),
    "output_dir": ("out", string),
}
CHAOS = {
    "basis": ("haar", choice(BASIS_KINDS)),
    "n_components": (1, integer(1)),
    "n_time_modes": (64, integer(1)),
    "max_order": (1, integer(0)),
}
GRID = {"T": (1.0, real(0.0, strict_lo=True)), "dt": (1e-3, real(0.0, strict_lo=True))}
SOLVER = {"substeps": (4, integer(1))}
SPDE_MODEL = {
    "nu": (1.0, real(0.0, strict_lo=True)),
    "sigma": (0.1, real(0.0)),
    "decay": (0.0, real(0.0)),
    "n_kl": (8, integer(1)),
    "chi0": ("sin", choice(CHI0_SHAPES)),
    "chi0_amplitude": (1.0, real()),
}


def _with(base, **changes):
    out = dict(base)
    for k, v in changes.items():
        out[k] = (v, base[k][1])
    return out


SCHEMA = {
    "ou": {
        "model": {"theta": (2.0, real()), "sigma": (0.5, real(0.0)), "x0": (1.0, real()), "mu": (0.0, real())},
        "grid": GRID, "chaos": CHAOS, "solver": SOLVER,
        "data": {"n_paths": (200, integer(1))},
    },
    "gbm": {
        "model": {"mu": (0.05, real()), "sigma": (0.2, real(0.0)), "x0": (1.0, real())},
        "grid": GRID, "chaos": CHAOS, "solver": SOLVER,
        "data": {"n_paths": (200, integer(1))},
    },
    "wick_drift": {
        "model": {"x0": (1.0, real()), "drift": ([0.0, -1.0], real_list()), "sigma": (0.5, real(0.0))},
        "grid": GRID, "chaos": CHAOS, "solver": SOLVER,
        "data": {"n_paths": (200, integer(1))},
    },
    "heat_spde": {
        "model": SPDE_MODEL,
        "grid": {**_with(GRID, T=0.05, dt=0.05 / 64), "n_x": (64, integer(2))},
        "chaos": _with(CHAOS, n_components=8, n_time_modes=32),
        "data": {"n_paths": (50, integer(1))},
    },
    "semilinear_spde": {
        "model": {**SPDE_MODEL, "reaction": ([0.0, 3.0, 0.0, -1.0], real_list())},
        "grid": {**_with(GRID, T=0.05, dt=0.05 / 64), "n_x": (64, integer(2))},
        "chaos": _with(CHAOS, n_components=2, n_time_modes=8, max_order=3),
        "solver": SOLVER,
        "data": {"n_paths": (50, integer(1))},
    },
    "phi41_estimation": {
        "model": _with(SPDE_MODEL, n_kl=33),
        "grid": {**_with(GRID, T=0.05), "n_x": (64, integer(2))},
        "chaos": _with(CHAOS, basis="trig", n_components=3, n_time_modes=4, max_order=2),
        "data": {"n_train": (800, integer(2)), "n_test": (200, integer(1)), "ridge": ("auto", ridge_value),
                 "estimator": ("ridge", choice(("ridge", "mc_projection")))},
    },
    "heston_extrapolation": {
        "model": {"mu": (0.05, real()), "kappa": (2.0, real(0.0)), "theta_v": (0.04, real(0.0)),
                  "zeta": (0.3, real(0.0)), "rho": (-0.7, real(-1.0, 1.0)), "s0": (1.0, real(0.0, strict_lo=True)),
                  "v0": (0.04, real(0.0))},
        "grid": _with(GRID, dt=0.01),
        "chaos": {**_with(CHAOS, basis="trig", n_time_modes=8, max_order=2), "cross_order": (2, integer(0))},
        "data": {"n_paths": (500, integer(2)), "windows": ([50, 60, 70, 80], int_list(1)),
                 "dictionary_degree": (1, integer(0, 3)), "ridge": ("auto", ridge_value)},
    },
    "enkf": {
        "model": {"theta": (4.0, real()), "mu": (1.0, real()), "sigma": (0.05, real(0.0)), "x0": (0.0, real())},
        "grid": {"dt": (0.01, real(0.0, strict_lo=True))},
        "enkf": {"n_members": (250, integer(2)), "theta_prior": ([0.0, 5.0], interval),
                 "mu_prior": ([-3.0, 3.0], interval), "sigma_prior": ([0.0, 0.5], interval),
                 "obs_noise": (1e-3, real(0.0, strict_lo=True)), "n_steps": (300, integer(1)),
                 "tail": (5, integer(1)), "stochastic_forecast": (True, boolean)},
    },
    "sensitivity": {
        "model": {"family": ("gbm", choice(("gbm", "ou"))), "theta": (2.0, real()), "mu": (0.05, real()),
                  "sigma": (0.2, real(0.0)), "x0": (1.0, real())},
        "grid": GRID,
        "chaos": _with(CHAOS, n_time_modes=8),
        "sweep": {"axis": ("n_time_modes", choice(("n_time_modes", "max_order", "n_paths"))),
                  "values": ([8, 16, 32, 64], int_list(1)),
                  "method": ("solver", choice(("solver", "ridge"))),
                  "n_test": (200, integer(1))},
        "data": {"n_paths": (200, integer(1))},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved config; ``sections`` maps section name to a key/value dict."""

    kind: str
    seed: int
    output_dir: str
    sections: dict

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def with_overrides(self, seed=None, output_dir=None) -> "ExperimentConfig":
        return ExperimentConfig(self.kind, self.seed if seed is None else integer(0, 2**64 - 1)("seed", seed),
                                self.output_dir if output_dir is None else str(output_dir), self.sections)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, "output_dir": self.output_dir}
        for name in sorted(self.sections):
            out[name] = {k: self.sections[name][k] for k in sorted(self.sections[name])}
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def n_steps(self) -> int:
        return resolve_n_steps(self)


def resolve_n_steps(config: ExperimentConfig) -> int:
    """Grid size from (T, dt); haar grids are rounded up to a multiple of J."""
    grid = config["grid"]
    n = max(1, math.ceil(grid["T"] / grid["dt"] - 1e-9))
    chaos = config.sections.get("chaos")
    if chaos and chaos["basis"] == "haar":
        sizes = [chaos["n_time_modes"]]
        sweep = config.sections.get("sweep")
        if sweep and sweep["axis"] == "n_time_modes":
            sizes = sweep["values"]
        m = max(sizes)
        n = m * math.ceil(n / m)
    return n


def _check_structure(config: ExperimentConfig):
    """Cross-key invariants and the index-set capacity guardrail."""
    kind, s = config.kind, config.sections
    chaos = s.get("chaos")
    if chaos:
        if chaos["basis"] == "haar":
            sizes = s["sweep"]["values"] if kind == "sensitivity" and s["sweep"]["axis"] == "n_time_modes" \
                else [chaos["n_time_modes"]]
            for J in sizes:
                if J & (J - 1):
                    _fail("chaos.n_time_modes", f"haar basis size must be a power of two, got {J}")
        I, J, K = chaos["n_components"], chaos["n_time_modes"], chaos["max_order"]
        if kind == "sensitivity":
            sw = s["sweep"]
            if sw["axis"] == "n_time_modes":
                J = max(sw["values"])
            elif sw["axis"] == "max_order":
                K = max(sw["values"])
        size = index_set_size(I, J, K)
        if size > MAX_INDEX_SET_SIZE:
            raise CapacityError(
                f"chaos: index set cardinality C(I*J + K, K) with I={I}, J={J}, K={K} is {size}, "
                f"above the limit {MAX_INDEX_SET_SIZE}"
            )
    if kind in ("ou", "gbm", "wick_drift", "heat_spde", "semilinear_spde", "sensitivity", "heston_extrapolation"):
        if config.n_steps < 1:
            _fail("grid.dt", "grid must have at least one step")
    if kind in ("ou", "gbm", "wick_drift") and chaos["n_components"] != 1:
        _fail("chaos.n_components", "scalar SDE experiments use a single noise component")
    if kind == "wick_drift" and len(s["model"]["drift"]) - 1 > chaos["max_order"]:
        _fail("model.drift", "drift polynomial degree must not exceed chaos.max_order")
    if kind == "semilinear_spde" and len(s["model"]["reaction"]) - 1 > chaos["max_order"]:
        _fail("model.reaction", "reaction polynomial degree must not exceed chaos.max_order")
    if kind in ("heat_spde", "semilinear_spde", "phi41_estimation"):
        n_x = s["grid"]["n_x"]
        if n_x & (n_x - 1):
            _fail("grid.n_x", f"must be a power of two, got {n_x}")
        if chaos["n_components"] > s["model"]["n_kl"]:
            _fail("chaos.n_components", "cannot exceed model.n_kl")
        if s["model"]["n_kl"] > n_x:
            _fail("model.n_kl", "cannot exceed grid.n_x")
    if kind == "heston_extrapolation":
        if max(s["data"]["windows"]) >= config.n_steps:
            _fail("data.windows", f"every window must be shorter than the grid ({config.n_steps} steps)")
        if chaos["cross_order"] > 2 * chaos["max_order"]:
            _fail("chaos.cross_order", "cannot exceed twice chaos.max_order")
    if kind == "enkf" and s["enkf"]["tail"] > s["enkf"]["n_steps"]:
        _fail("enkf.tail", "cannot exceed enkf.n_steps")
    if kind == "phi41_estimation" and s["data"]["n_train"] < 2:
        _fail("data.n_train", "need at least two training paths")


def parse_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a table")
    if "kind" not in raw:
        raise ConfigurationError("kind: required key missing")
    kind = raw["kind"]
    if kind not in KINDS:
        _fail("kind", f"must be one of {list(KINDS)}, got {kind!r}")
    schema = SCHEMA[kind]
    top = {}
    sections = {name: {} for name in schema}
    for key, value in raw.items():
        if key == "kind":
            continue
        if key in TOP:
            top[key] = TOP[key][1](key, value)
        elif key in schema:
            if not isinstance(value, dict):
                _fail(key, "expected a table")
            for sub, v in value.items():
                if sub not in schema[key]:
                    raise ConfigurationError(f"unknown key {key}.{sub!s} for kind {kind!r}")
                sections[key][sub] = schema[key][sub][1](f"{key}.{sub}", v)
        else:
            raise ConfigurationError(f"unknown key {key!s} for kind {kind!r}")
    for name, keys in schema.items():
        for sub, (default, _) in keys.items():
            sections[name].setdefault(sub, list(default) if isinstance(default, list) else default)
    for key, (default, _) in TOP.items():
        top.setdefault(key, default)
    config = ExperimentConfig(kind, top["seed"], top["output_dir"], sections)
    _check_structure(config)
    return config


def parse_string(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}") from None
    return parse_dict(raw)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_string(path.read_text())


def default_config(kind: str, **overrides) -> ExperimentConfig:
    """Fully defaulted config for ``kind``; ``overrides`` maps section -> dict."""
    raw = {"kind": kind}
    raw.update(overrides)
    return parse_dict(raw)
