"""JSON run configuration: schema, validation and defaults."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

FAMILIES = ("random_precision", "wendland_gp", "gmrf_whitening")
PARAM_NAMES = {
    "random_precision": ("ln_gamma",),
    "wendland_gp": ("ln_tau", "ln_s2", "ln_l"),
    "gmrf_whitening": ("ln_tau", "ln_gamma"),
}

_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_num = {"type": "number"}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "seed": _seed,
                "n": {"type": "integer", "minimum": 2},
                "nx": {"type": "integer", "minimum": 2},
                "ny": {"type": "integer", "minimum": 2},
                "n_obs": {"type": "integer", "minimum": 1},
                "truth": {"type": "object", "additionalProperties": _num},
                "data_dir": {"type": "string"},
                "mean_centers": {"type": "integer", "minimum": 1},
            },
            "allOf": [
                {
                    "if": {"properties": {"family": {"const": "gmrf_whitening"}}},
                    "then": {"properties": {"n": False}},
                    "else": {"properties": {"nx": False, "ny": False, "n_obs": False}},
                },
                {
                    "if": {"properties": {"family": {"const": "wendland_gp"}}},
                    "else": {"properties": {"mean_centers": False}},
                },
            ],
        },
        "mcmc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": {"type": "integer", "minimum": 0},
                "burnin": {"type": "integer", "minimum": 0},
                "init": {
                    "oneOf": [
                        {"enum": ["prior", "truth"]},
                        {"type": "array", "items": _num, "minItems": 1},
                    ]
                },
                "proposal_sd": {"type": "number", "exclusiveMinimum": 0},
                "adapt_every": {"type": "integer", "minimum": 50},
                "adapt": {"type": "boolean"},
                "seed": _seed,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "rational": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N": {"oneOf": [{"const": "auto"}, {"type": "integer", "minimum": 1}]}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "model": {"seed": 0},
    "mcmc": {"iterations": 10_000, "init": "prior", "proposal_sd": 0.1, "adapt_every": 100,
             "adapt": True, "seed": 0},
    "solver": {"tol": 1e-10, "max_iters": None},
    "rational": {"N": "auto"},
    "output": {"directory": "."},
}


def validate(config: dict) -> dict:
    """Validate ``config`` and return a copy with defaults filled in."""
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    out = copy.deepcopy(config)
    for block, values in DEFAULTS.items():
        merged = dict(values)
        merged.update(out.get(block, {}))
        out[block] = merged
    family = out["model"]["family"]
    names = PARAM_NAMES[family]
    truth = out["model"].get("truth")
    if truth is not None and set(truth) != set(names):
        raise ConfigError(f"model/truth: expected keys {list(names)}, got {sorted(truth)}")
    init = out["mcmc"]["init"]
    if init == "truth" and truth is None:
        raise ConfigError("mcmc/init: 'truth' requires model/truth")
    if isinstance(init, list) and len(init) != len(names):
        raise ConfigError(f"mcmc/init: expected {len(names)} values")
    burnin = out["mcmc"].get("burnin")
    iters = out["mcmc"]["iterations"]
    if burnin is not None and iters and burnin >= iters:
        raise ConfigError("mcmc/burnin: must be smaller than iterations")
    return out


def load(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate(raw)
