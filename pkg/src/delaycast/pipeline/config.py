"""Experiment configuration: presets, schema validation, hashing.

A config is a JSON object. Presets supply every field; a user file only
needs the fields it changes and is deep-merged over the chosen preset.
The ``desk`` presets shrink the published protocols (fewer samples,
narrower nets, fewer epochs with the learning-rate schedule compressed by
the same factor); the ``paper`` presets reproduce them.
"""

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

CONFIG_VERSION = 1

_TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr0": {"type": "number", "exclusiveMinimum": 0},
        "lr_decay_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "lr_decay_every": {"type": "integer", "minimum": 1},
        "normalize": {"type": "boolean"},
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "n_multistep": {"type": "integer", "minimum": 1},
        "damping": {"type": "number", "minimum": 0},
        "rk4_substeps": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["version", "system", "observation", "embedding", "models", "train",
                 "evaluation", "seeds"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "name": {"type": "string"},
        "preset": {"enum": ["desk", "paper"]},
        "system": {
            "type": "object",
            "required": ["kind", "n_samples", "sample_dt", "transient_discard", "seed"],
            "properties": {
                "kind": {"enum": ["lorenz", "kse"]},
                "params": {"type": "object"},
                "n_samples": {"type": "integer", "minimum": 1},
                "sample_dt": {"type": "number", "exclusiveMinimum": 0},
                "transient_discard": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "baseline_seed": {"type": "integer"},
                "fine_sample_dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "observation": {
            "type": "object",
            "properties": {
                "channels": {"type": "array", "items": {"type": "integer", "minimum": 0},
                             "minItems": 1, "uniqueItems": True},
                "evenly_spaced": {"type": "integer", "minimum": 1},
            },
            "minProperties": 1, "maxProperties": 1,
            "additionalProperties": False,
        },
        "embedding": {
            "type": "object",
            "required": ["m", "tau"],
            "properties": {
                "m": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "tau": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                        "minItems": 1},
                "mi_max_lag": {"type": "integer", "minimum": 2},
                "mi_bins": {"type": "integer", "minimum": 2},
                "fnn_m_max": {"type": "integer", "minimum": 2},
                "fnn_rtol": {"type": "number", "exclusiveMinimum": 0},
                "fnn_atol": {"type": "number", "exclusiveMinimum": 0},
                "fnn_max_points": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "models": {"type": "array", "items": {"enum": ["dts", "node", "recon"]},
                   "minItems": 1, "uniqueItems": True},
        "train": {
            "type": "object",
            "properties": {k: _TRAIN_SCHEMA for k in ("dts", "node", "recon")},
            "additionalProperties": False,
        },
        "evaluation": {
            "type": "object",
            "properties": {
                "n_ensembles": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "n_bins": {"type": "integer", "minimum": 2},
                "max_lag_time": {"type": "number", "exclusiveMinimum": 0},
                "node_sample_dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
    },
    "additionalProperties": False,
}


def _lorenz(preset):
    paper = preset == "paper"
    train = {"epochs": 1000 if paper else 200, "batch_size": 256, "lr0": 1e-3,
             "lr_decay_factor": 0.5, "lr_decay_every": 100 if paper else 20,
             "normalize": True, "hidden": [200, 200] if paper else [64, 64]}
    return {
        "version": CONFIG_VERSION,
        "name": f"lorenz-{preset}",
        "preset": preset,
        "system": {"kind": "lorenz", "params": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
                   "n_samples": 500_000 if paper else 100_000, "sample_dt": 0.1,
                   "transient_discard": 10_000, "seed": 0, "baseline_seed": 1000,
                   "fine_sample_dt": 0.01},
        "observation": {"channels": [0]},
        "embedding": {"m": [1, 2, 3, 4, 5, 6], "tau": [0.1],
                      "mi_max_lag": 20, "mi_bins": 16, "fnn_m_max": 6, "fnn_rtol": 10.0,
                      "fnn_atol": 2.0, "fnn_max_points": 10_000},
        "models": ["dts", "recon", "node"],
        "train": {
            "dts": dict(train),
            "recon": dict(train),
            "node": {"epochs": 50_000 if paper else 5_000, "batch_size": 100,
                     "lr0": 1e-3 if paper else 3e-3,
                     "lr_decay_factor": 0.5, "lr_decay_every": 10_000 if paper else 1_000,
                     "normalize": True,
                     "hidden": [200, 200, 200] if paper else [64, 64, 64],
                     "n_multistep": 2, "damping": 1e-3, "rk4_substeps": 4},
        },
        "evaluation": {"n_ensembles": 2000 if paper else 500, "horizon": 10.0 if paper else 2.0,
                       "duration": 50_000.0 if paper else 10_000.0, "n_bins": 100,
                       "max_lag_time": 5.0, "node_sample_dt": 0.01},
        "seeds": [0, 1, 2, 3, 4],
    }


def _kse(preset, L=22.0):
    paper = preset == "paper"
    width = (256 if L <= 22 else 512) if paper else 128
    train = {"epochs": 1000 if paper else 200, "batch_size": 256, "lr0": 1e-3,
             "lr_decay_factor": 0.5, "lr_decay_every": 100 if paper else 20,
             "normalize": True, "hidden": [width] * 4}
    return {
        "version": CONFIG_VERSION,
        "name": f"kse-L{L:g}-{preset}",
        "preset": preset,
        "system": {"kind": "kse", "params": {"L": L, "n_grid": 64, "dt": 0.25},
                   "n_samples": 400_000 if paper else 100_000, "sample_dt": 0.25,
                   "transient_discard": 4_000, "seed": 0, "baseline_seed": 1000,
                   "fine_sample_dt": None},
        "observation": {"evenly_spaced": 8},
        "embedding": {"m": [1, 2], "tau": [1.5, 4.0], "mi_max_lag": 40, "mi_bins": 16,
                      "fnn_m_max": 8, "fnn_rtol": 10.0, "fnn_atol": 2.0,
                      "fnn_max_points": 10_000},
        "models": ["dts", "recon", "node"],
        "train": {
            "dts": dict(train),
            "recon": dict(train),
            "node": {"epochs": 200_000 if paper else 5_000, "batch_size": 100, "lr0": 1e-3,
                     "lr_decay_factor": 0.5, "lr_decay_every": 25_000 if paper else 625,
                     "normalize": True, "hidden": [width] * 4, "n_multistep": 20,
                     "damping": 1e-3, "rk4_substeps": 2},
        },
        "evaluation": {"n_ensembles": 500, "horizon": 60.0, "duration": 100_000.0 if paper else 10_000.0,
                       "n_bins": 100, "max_lag_time": 60.0, "node_sample_dt": None},
        "seeds": [0, 1, 2, 3, 4] if paper else [0],
    }


def preset_config(system="lorenz", preset="desk", L=None):
    """Full default config for ``system`` under ``preset``."""
    if preset not in ("desk", "paper"):
        raise ValueError(f"unknown preset {preset!r}")
    if system == "lorenz":
        return _lorenz(preset)
    if system == "kse":
        return _kse(preset, 22.0 if L is None else float(L))
    raise ValueError(f"unknown system {system!r}")


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg):
    jsonschema.validate(cfg, SCHEMA)
    return cfg


def resolve(user=None, preset=None, system=None):
    """Merge a (possibly partial) user config over its preset and validate."""
    user = dict(user or {})
    preset = preset or user.get("preset") or "desk"
    system = system or user.get("system", {}).get("kind") or "lorenz"
    L = user.get("system", {}).get("params", {}).get("L")
    cfg = deep_merge(preset_config(system, preset, L), user)
    cfg["preset"] = preset
    return validate(cfg)


def load(path, preset=None, system=None):
    return resolve(json.loads(Path(path).read_text()), preset, system)


def dumps(cfg):
    """Canonical serialization (sorted keys) used for hashing and writing."""
    return json.dumps(cfg, indent=2, sort_keys=True)


def parse(text):
    return validate(json.loads(text))


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
