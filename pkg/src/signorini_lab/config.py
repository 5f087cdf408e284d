"""Experiment configuration: TOML file, per-experiment defaults, --set overrides.

A resolved config is a plain nested dict with four tables ([grid], [solver],
[params]) plus top-level keys; unknown keys and out-of-range values raise
ConfigError, which the CLI turns into exit code 2.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXPERIMENTS = ("stationarity", "decay-32", "decay-2m", "inhomogeneous-32",
               "frequency-gap", "regular-fb", "spectrum", "crossval")

DEFAULT_OUTPUT_ROOT = "runs"


class ConfigError(ValueError):
    pass


_COMMON_SOLVER = {"scheme": "projected", "tol": 1e-10, "omega": 1.5, "eps": 1e-2}

DEFAULTS = {
    "stationarity": {
        "grid": {"n": 2, "R": 6.0, "h": 0.05},
        "solver": dict(_COMMON_SOLVER, dtau=0.01, tau_max=5.0),
        "params": {
            "refinement": [[0.1, 0.02], [0.05, 0.01]],
            "identity_levels": [[0.2, 0.04], [0.1, 0.02], [0.05, 0.01]],
            "identity_tau_max": 2.0,
            "identity_skip": 0.25,
            "random_runs": 20,
            "random_h": 0.1,
            "random_dtau": 0.02,
            "random_tau_max": 3.0,
            "pair_stride": 5,
        },
    },
    "decay-32": {
        "grid": {"n": 2, "R": 6.0, "h": 0.05},
        "solver": dict(_COMMON_SOLVER, dtau=0.01, tau_max=6.0),
        "params": {"runs": 10, "delta": 0.05, "fit_window": [1.0, 6.0]},
    },
    "decay-2m": {
        "grid": {"n": 2, "R": 6.0, "h": 0.05},
        "solver": dict(_COMMON_SOLVER, dtau=0.01, tau_max=3.0),
        "params": {
            "m": 1,
            "bookkeeping_runs": 10,
            "negative_runs": 5,
            "negative_h": 0.1,
            "negative_dtau": 0.02,
            "negative_tau_max": 4.0,
            "gap_draws": 100,
            "gap_orders": [1, 2],
            "gap_h": 0.1,
        },
    },
    "inhomogeneous-32": {
        "grid": {"n": 2, "R": 6.0, "h": 0.05},
        "solver": dict(_COMMON_SOLVER, dtau=0.01, tau_max=6.0),
        "params": {"runs": 5, "delta": 0.05, "amplitude": [0.005, 0.015], "fit_window": [1.0, 6.0]},
    },
    "frequency-gap": {
        "grid": {"n": 2, "R": 6.0, "h": 0.1},
        "solver": dict(_COMMON_SOLVER, dtau=0.02, tau_max=5.0),
        "params": {"m": 1, "eps": [0.1, 0.3, 0.5], "cells": 40, "mapped_dtau": 0.01,
                   "mapped_tau_max": 5.0, "exclude_below": 1e-3},
    },
    "regular-fb": {
        "grid": {"n": 2, "R": 6.0, "h": 0.1},
        "solver": dict(_COMMON_SOLVER, dtau=0.05, tau_max=3.0),
        "params": {"angles": [0.3, -0.5], "window_h": 0.02, "n3_R": 3.0, "n3_h": 0.2,
                   "tilt": 0.2, "perturbation": 0.05},
    },
    "spectrum": {
        "grid": {"n": 2, "R": 6.0, "h": 0.1},
        "solver": dict(_COMMON_SOLVER, dtau=0.01, tau_max=1.0),
        "params": {"levels": [40, 80, 160], "k": 3},
    },
    "crossval": {
        "grid": {"n": 2, "R": 6.0, "h": 0.1},
        "solver": dict(_COMMON_SOLVER, dtau=0.02, tau_max=1.0),
        "params": {"eps": [1e-1, 1e-2, 1e-3]},
    },
}

TOP_KEYS = {"experiment", "seed", "output", "deterministic", "grid", "solver", "params"}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output: str
    deterministic: bool
    grid: dict
    solver: dict
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "output": self.output,
                "deterministic": self.deterministic, "grid": dict(self.grid),
                "solver": dict(self.solver), "params": copy.deepcopy(self.params)}

    def output_dir(self) -> Path:
        out = Path(self.output)
        if out.is_absolute():
            return out
        return Path(os.environ.get("LAB_OUTPUT_ROOT") or DEFAULT_OUTPUT_ROOT) / out


def parse_value(text: str):
    """TOML value syntax for --set; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, text = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in {assignment!r}")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key} does not name a table entry")
    node[parts[-1]] = parse_value(text.strip())


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {where}.{k}")
        out[k] = v
    return out


def _number(d: dict, key: str, where: str, lo=None, hi=None, integer=False, strict_lo=True):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key} must be an integer")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigError(f"{where}.{key} = {v} is out of range (must be {'>' if strict_lo else '>='} {lo})")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}.{key} = {v} is out of range (must be <= {hi})")
    d[key] = int(v) if integer else float(v)


def _positive_list(d: dict, key: str, where: str):
    v = d[key]
    flat = v if not (v and isinstance(v[0], list)) else [x for row in v for x in row]
    if not isinstance(v, list) or not v or any(isinstance(x, bool) or not isinstance(x, (int, float)) or x <= 0 for x in flat):
        raise ConfigError(f"{where}.{key} must be a nonempty list of positive numbers")


def validate(cfg: ExperimentConfig) -> None:
    g, s, p = cfg.grid, cfg.solver, cfg.params
    _number(g, "n", "grid", 1, 3, integer=True)
    _number(g, "R", "grid", 0)
    _number(g, "h", "grid", 0, g["R"] / 4)
    _number(s, "dtau", "solver", 0, 1.0)
    _number(s, "tau_max", "solver", 0)
    _number(s, "tol", "solver", 0, 1e-2)
    _number(s, "omega", "solver", 0, 2.0 - 1e-9)
    _number(s, "eps", "solver", 0, 1.0)
    if s["scheme"] not in ("projected", "penalized"):
        raise ConfigError(f"solver.scheme must be projected or penalized, got {s['scheme']!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    for key in ("runs", "random_runs", "bookkeeping_runs", "negative_runs", "gap_draws", "cells", "k",
                "pair_stride", "m"):
        if key in p:
            _number(p, key, "params", 0, integer=True)
    for key in ("delta", "identity_tau_max", "random_h", "random_dtau", "random_tau_max", "negative_h",
                "negative_dtau", "negative_tau_max", "gap_h", "mapped_dtau", "mapped_tau_max",
                "window_h", "n3_R", "n3_h", "exclude_below"):
        if key in p:
            _number(p, key, "params", 0)
    for key in ("identity_skip", "perturbation"):
        if key in p:
            _number(p, key, "params", 0, strict_lo=False)
    if "delta" in p and p["delta"] >= 1:
        raise ConfigError("params.delta must be below 1")
    for key in ("eps", "refinement", "identity_levels", "levels", "amplitude", "gap_orders", "fit_window"):
        if key in p:
            _positive_list(p, key, "params")
    if cfg.experiment == "frequency-gap" and any(e >= 1 for e in p["eps"]):
        raise ConfigError("params.eps values must lie in (0, 1)")
    if cfg.experiment == "crossval" and len(p["eps"]) < 2:
        raise ConfigError("crossval needs at least two penalty values")


def resolve(raw: dict, overrides=(), deterministic: bool | None = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    for a in overrides:
        apply_override(raw, a)
    for k in raw:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown key {k}")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {name!r}")
    base = DEFAULTS[name]
    tables = {}
    for t in ("grid", "solver", "params"):
        given = raw.get(t, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{t}] must be a table")
        tables[t] = _merge(base[t], given, t)
    det = raw.get("deterministic", False) if deterministic is None else (deterministic or raw.get("deterministic", False))
    if not isinstance(det, bool):
        raise ConfigError("deterministic must be true or false")
    cfg = ExperimentConfig(name, raw.get("seed", 0), str(raw.get("output", name)), det,
                           tables["grid"], tables["solver"], tables["params"])
    validate(cfg)
    return cfg


def load(path, overrides=(), deterministic: bool | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return resolve(raw, overrides, deterministic)
