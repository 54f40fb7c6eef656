"""Run configuration: JSON schema, presets and conversion to module objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema
import numpy as np

from .numerics import TimeGrid
from .systems import GaussianIC, NoiseConfig, build_system, rd_ic
from .training import TrainingConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration (maps to exit code 2)."""


_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_prior = {"type": "array", "prefixItems": [{"enum": ["gaussian", "laplace"]}, _num, {"type": "number",
                                                                                     "exclusiveMinimum": 0}],
          "minItems": 3, "maxItems": 3}
_layers = {"type": "array", "items": _posint}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": ["rossler", "reaction-diffusion", "duffing-beam"]},
        "seed": {"type": "integer", "minimum": 0},
        "system": {
            "type": "object", "additionalProperties": False, "required": ["name"],
            "properties": {"name": {"enum": ["rossler", "reaction_diffusion", "duffing"]},
                           "params": {"type": "object"}},
        },
        "dataset": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_trajectories": {"type": "integer", "minimum": 0},
                "t0": _num, "dt": {"type": "number", "exclusiveMinimum": 0}, "n_steps": {"type": "integer",
                                                                                       "minimum": 5},
                "ic": {"type": "object", "additionalProperties": False,
                       "properties": {"kind": {"enum": ["gaussian", "spiral"]},
                                      "mean": {"type": "array", "items": _num}, "std": _nonneg}},
                "betas": {"type": "array", "items": {"type": "array", "items": _num}},
                "noise": {"type": "object", "additionalProperties": False,
                          "properties": {"measurement_level": _nonneg, "model_level": _nonneg,
                                         "additive_level": _nonneg, "additive_snr_db": {"type": ["number", "null"]}}},
            },
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "lambdas": {"type": "array", "items": _nonneg, "minItems": 5, "maxItems": 5},
                "epochs": {"type": "integer", "minimum": 0}, "batch_size": _posint,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "validation_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "second_order": {"type": "boolean"},
                "latent_dim": {"type": ["integer", "null"], "minimum": 1},
                "encoder_layers": _layers, "decoder_layers": _layers,
                "activation": {"enum": ["elu", "identity"]},
                "latent_prior": _prior, "coefficient_prior": _prior,
                "library": {"type": "object", "additionalProperties": False,
                            "properties": {"degree": {"type": "integer", "minimum": 1},
                                           "include_bias": {"type": "boolean"},
                                           "include_interactions": {"type": "boolean"},
                                           "include_params": {"type": "boolean"},
                                           "param_names": {"type": "array", "items": {"type": "string"}},
                                           "forced_harmonic": {"type": "array", "items": {
                                               "type": "array", "items": {"type": "integer", "minimum": 0},
                                               "minItems": 2, "maxItems": 2}},
                                           "trig": {"type": "array", "items": {
                                               "type": "array", "prefixItems": [{"type": "integer"},
                                                                                {"enum": ["sin", "cos"]}],
                                               "minItems": 2, "maxItems": 2}}}},
                "pod_dim": {"type": ["integer", "null"], "minimum": 1},
                "standardize": {"type": "boolean"},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "thresholding": {"type": "object", "additionalProperties": False,
                         "properties": {"tau": {"type": "number", "exclusiveMinimum": 0},
                                        "fine_tune": {"type": "boolean"},
                                        "fine_tune_epochs": {"type": "integer", "minimum": 0}}},
        "forecast": {"type": "object", "additionalProperties": False,
                     "properties": {"m": _posint, "levels": {"type": "array", "items": {
                         "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                         "t0": _num, "dt": {"type": "number", "exclusiveMinimum": 0}, "n_steps": {"type": "integer",
                                                                                                "minimum": 2},
                         "trajectory": {"type": "integer", "minimum": 0},
                         "x0": {"type": "array", "items": _num}, "xdot0": {"type": "array", "items": _num},
                         "beta": {"type": "array", "items": _num},
                         "members": {"type": "boolean"}, "csv_components": _posint}},
        "paths": {"type": "object", "additionalProperties": False,
                  "properties": {k: {"type": "string"} for k in ("dataset", "checkpoint", "forecast", "metrics",
                                                                  "reference")}},
    },
}

DEFAULTS = {
    "seed": 0,
    "dataset": {"n_trajectories": 1, "t0": 0.0, "dt": 0.01, "n_steps": 1000, "ic": {"kind": "gaussian"},
                "noise": {"measurement_level": 0.0, "model_level": 0.0, "additive_level": 0.0,
                          "additive_snr_db": None}},
    "model": {},
    "thresholding": {"tau": 5.0, "fine_tune": False, "fine_tune_epochs": 100},
    "forecast": {"m": 100, "levels": [0.5, 0.9], "trajectory": 0, "members": True, "csv_components": 16},
    "paths": {},
}


def _rd_train_betas() -> list[list[float]]:
    """16 of 20 equispaced values in [0.7, 1.1], split with a fixed permutation."""
    grid = np.linspace(0.7, 1.1, 20)
    perm = np.random.default_rng(0).permutation(20)
    return [[float(b)] for b in np.sort(grid[perm[:16]])]


def _duffing_betas() -> list[list[float]]:
    return [[float(w), float(F)] for w in np.linspace(0.8, 1.2, 7) for F in (0.25, 0.5, 0.75, 1.0)]


PRESETS = {
    "rossler": {
        "system": {"name": "rossler", "params": {"alpha": [0.2, 0.2, 5.7]}},
        "dataset": {"n_trajectories": 30, "t0": 0.0, "dt": 24.0 / 1999, "n_steps": 2000,
                    "ic": {"kind": "gaussian", "mean": [-5.0, -5.0, 0.0], "std": 2.25}},
        "model": {"lambdas": [0.0, 0.0, 1.0, 1e-3, 0.0], "epochs": 500, "batch_size": 256, "learning_rate": 1e-3,
                  "latent_dim": None, "coefficient_prior": ["laplace", 0.0, 1.0],
                  "library": {"degree": 2, "include_bias": True, "include_interactions": True}},
        "thresholding": {"tau": 5.0},
        "forecast": {"m": 100, "t0": 0.0, "dt": 24.0 / 1999, "n_steps": 2000},
    },
    "reaction-diffusion": {
        "system": {"name": "reaction_diffusion", "params": {"mu": 1.0, "d1": 0.01, "d2": 0.01, "L": 10.0,
                                                            "n_points": 50}},
        "dataset": {"n_trajectories": 16, "t0": 0.0, "dt": 0.05, "n_steps": 400, "ic": {"kind": "spiral"},
                    "betas": _rd_train_betas(), "noise": {"measurement_level": 0.2}},
        "model": {"lambdas": [1e-2, 2e-5, 4.0, 1e-4, 1e-2], "epochs": 2000, "batch_size": 256,
                  "learning_rate": 1e-3, "latent_dim": 2, "encoder_layers": [32, 16, 8],
                  "decoder_layers": [8, 16, 32], "activation": "elu", "pod_dim": 32,
                  "latent_prior": ["gaussian", 0.0, 1.0], "coefficient_prior": ["laplace", 0.0, 1.0],
                  "library": {"degree": 3, "include_bias": True, "include_interactions": True}},
        "thresholding": {"tau": 5.0},
        "forecast": {"m": 100, "t0": 0.0, "dt": 0.05, "n_steps": 800},
    },
    "duffing-beam": {
        "system": {"name": "duffing", "params": {"omega0": 1.0, "xi": 0.05, "gamma": 0.3, "forcing_gain": 1.0,
                                                 "n_dofs": 64}},
        "dataset": {"n_trajectories": 28, "t0": 0.0, "dt": 0.05, "n_steps": 2001,
                    "ic": {"kind": "gaussian", "mean": [0.0, 0.0], "std": 1.0},
                    "betas": _duffing_betas(), "noise": {"additive_snr_db": 38.0}},
        "model": {"lambdas": [1e-3, 1e-8, 1.0, 1e-8, 1e-5], "epochs": 2500, "batch_size": 256,
                  "learning_rate": 2e-3, "second_order": True, "latent_dim": 1, "pod_dim": 3,
                  "encoder_layers": [32, 32, 32], "decoder_layers": [32, 32, 32], "activation": "elu",
                  "latent_prior": ["gaussian", 0.0, 1.0], "coefficient_prior": ["laplace", 0.0, 1.0],
                  "library": {"degree": 3, "include_bias": True, "include_interactions": True,
                              "forced_harmonic": [[1, 0]], "param_names": ["w", "F"]}},
        "thresholding": {"tau": 1.9},
        "forecast": {"m": 100, "t0": 0.0, "dt": 0.05, "n_steps": 2001},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  at {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n" + "\n".join(lines))


def resolve(doc: dict, seed: int | None = None) -> dict:
    """Validate, expand a preset and fill defaults; ``seed`` overrides the config seed."""
    validate(doc)
    full = _merge(DEFAULTS, PRESETS.get(doc.get("preset"), {}))
    full = _merge(full, {k: v for k, v in doc.items() if k != "preset"})
    if seed is not None:
        full["seed"] = int(seed)
    validate(full)
    if "system" not in full:
        raise ConfigError("configuration needs a 'system' section or a preset")
    return full


def load(source: str | Path | None, seed: int | None = None) -> dict:
    """Read a config file, or expand a bare preset name."""
    if source is None:
        raise ConfigError("no configuration given")
    src = str(source)
    if src in PRESETS and not Path(src).exists():
        return resolve({"preset": src}, seed)
    try:
        with open(src, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{src}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{src}: top level must be an object")
    return resolve(doc, seed)


# ---------------------------------------------------------------------------
# conversion to module objects
# ---------------------------------------------------------------------------

def dataset_grid(cfg: dict) -> TimeGrid:
    d = cfg["dataset"]
    return TimeGrid.from_dt(d["t0"], d["dt"], d["n_steps"])


def forecast_grid(cfg: dict, fallback: TimeGrid | None = None) -> TimeGrid:
    f = cfg["forecast"]
    if "dt" in f and "n_steps" in f:
        return TimeGrid.from_dt(f.get("t0", 0.0), f["dt"], f["n_steps"])
    if fallback is None:
        raise ConfigError("forecast grid not configured")
    return fallback


def noise_config(cfg: dict) -> NoiseConfig:
    n = cfg["dataset"]["noise"]
    return NoiseConfig(n.get("measurement_level", 0.0), n.get("model_level", 0.0), n.get("additive_level", 0.0),
                       cfg["seed"], n.get("additive_snr_db"))


def system_and_ic(cfg: dict):
    sysc = cfg["system"]
    params = sysc.get("params", {})
    try:
        system = build_system(sysc["name"], params)
    except TypeError as exc:
        raise ConfigError(f"bad system parameters: {exc}") from exc
    ic = cfg["dataset"]["ic"]
    if ic.get("kind") == "spiral":
        init = rd_ic(params.get("L", 10.0), params.get("n_points", 50))
    else:
        mean = ic.get("mean", [0.0] * system.state_dim)
        if len(mean) != system.state_dim:
            raise ConfigError(f"initial-condition mean needs {system.state_dim} entries")
        init = GaussianIC(np.asarray(mean, dtype=np.float64), ic.get("std", 1.0))
    return system, init


def betas(cfg: dict):
    d = cfg["dataset"]
    b = d.get("betas")
    if b is None:
        return None
    if len(b) != d["n_trajectories"]:
        raise ConfigError(f"{len(b)} parameter rows given for {d['n_trajectories']} trajectories")
    return np.asarray(b, dtype=np.float64)


def training_config(cfg: dict) -> TrainingConfig:
    m = dict(cfg["model"])
    for k in ("latent_prior", "coefficient_prior"):
        if k in m:
            m[k] = tuple(m[k])
    m["seed"] = cfg["seed"]
    try:
        return TrainingConfig.from_dict(m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
