"""Strict JSON experiment configuration.

An empty object is a complete configuration (every field has a default);
unknown keys are rejected so typos cannot silently fall back to defaults.
Constraint violations name the offending field. `to_dict` on the returned
config and `parse_config` are mutually inverse, so parse -> serialize ->
parse is a fixed point.
"""

from __future__ import annotations

import json
from pathlib import Path

from .data import STREAM_MODES, DataConfig
from .errors import ConfigError
from .federation import MODES, ExperimentConfig, FederationConfig
from .matching import NegativeSynthesisSpec

_TOP_KEYS = ("mode", "seed", "clients", "active_fraction", "rounds_per_task",
             "local_epochs", "batch_size", "lr", "weight_decay", "lambda",
             "alpha", "max_pool_size", "km_include_self", "data", "arch",
             "negatives")
_DATA_KEYS = ("num_classes", "input_dim", "samples_per_class",
              "class_separation", "rotation_degrees", "domain_noise_sigma",
              "stream_mode", "seed")


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _as_int(obj: dict, key: str, default: int, minimum: int) -> int:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    if v < minimum:
        raise ConfigError(f"{key}: must be at least {minimum}, got {v}")
    return v


def _as_float(obj: dict, key: str, default: float, lo: float | None = None,
              hi: float | None = None, lo_open: bool = False) -> float:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        bound = f"greater than {lo:g}" if lo_open else f"at least {lo:g}"
        raise ConfigError(f"{key}: must be {bound}, got {v:g}")
    if hi is not None and v > hi:
        raise ConfigError(f"{key}: must be at most {hi:g}, got {v:g}")
    return v


def _as_bool(obj: dict, key: str, default: bool) -> bool:
    v = obj.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{key}: expected true or false, got {v!r}")
    return v


def _as_choice(obj: dict, key: str, default: str, choices) -> str:
    v = obj.get(key, default)
    if v not in choices:
        raise ConfigError(f"{key}: must be one of {', '.join(choices)}; got {v!r}")
    return v


def _parse_data(obj: dict) -> DataConfig:
    if not isinstance(obj, dict):
        raise ConfigError("data: expected an object")
    _reject_unknown(obj, _DATA_KEYS, "data")
    degrees = obj.get("rotation_degrees", [0.0, 60.0, 120.0, 180.0])
    if (not isinstance(degrees, list) or len(degrees) == 0
            or not all(isinstance(d, (int, float)) and not isinstance(d, bool)
                       for d in degrees)):
        raise ConfigError("rotation_degrees: expected a non-empty list of numbers")
    seed = obj.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)
                             or seed < 0):
        raise ConfigError(f"data.seed: expected null or a non-negative integer, got {seed!r}")
    return DataConfig(
        num_classes=_as_int(obj, "num_classes", 5, minimum=2),
        input_dim=_as_int(obj, "input_dim", 16, minimum=1),
        samples_per_class=_as_int(obj, "samples_per_class", 250, minimum=5),
        class_separation=_as_float(obj, "class_separation", 8.0, lo=0.0, lo_open=True),
        rotation_degrees=tuple(float(d) for d in degrees),
        domain_noise_sigma=_as_float(obj, "domain_noise_sigma", 0.3, lo=0.0),
        stream_mode=_as_choice(obj, "stream_mode", "synchronized", STREAM_MODES),
        seed=seed,
    )


def _parse_arch(obj: dict) -> tuple:
    if not isinstance(obj, dict):
        raise ConfigError("arch: expected an object")
    _reject_unknown(obj, ("hidden_dims",), "arch")
    dims = obj.get("hidden_dims", [64, 32])
    if (not isinstance(dims, list) or len(dims) == 0
            or not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1
                       for h in dims)):
        raise ConfigError("hidden_dims: expected a non-empty list of positive integers")
    return tuple(int(h) for h in dims)


def _parse_negatives(obj: dict) -> NegativeSynthesisSpec:
    if not isinstance(obj, dict):
        raise ConfigError("negatives: expected an object")
    _reject_unknown(obj, ("noise_sigma_scale", "permute_fraction"), "negatives")
    return NegativeSynthesisSpec(
        noise_sigma_scale=_as_float(obj, "noise_sigma_scale", 1.5, lo=0.0, lo_open=True),
        permute_fraction=_as_float(obj, "permute_fraction", 0.5, lo=0.0, hi=1.0),
    )


def parse_config(obj: dict) -> ExperimentConfig:
    """Validate a plain dict (e.g. parsed JSON) into an ExperimentConfig."""
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    _reject_unknown(obj, _TOP_KEYS, "config")
    fed = FederationConfig(
        num_clients=_as_int(obj, "clients", 8, minimum=1),
        active_fraction=_as_float(obj, "active_fraction", 0.4, lo=0.0, hi=1.0,
                                  lo_open=True),
        rounds_per_task=_as_int(obj, "rounds_per_task", 180, minimum=1),
        local_epochs=_as_int(obj, "local_epochs", 20, minimum=1),
        batch_size=_as_int(obj, "batch_size", 32, minimum=1),
        lr=_as_float(obj, "lr", 1e-3, lo=0.0, lo_open=True),
        weight_decay=_as_float(obj, "weight_decay", 1e-3, lo=0.0),
        lam=_as_float(obj, "lambda", 0.5, lo=0.0, hi=1.0),
        alpha=_as_float(obj, "alpha", 1.0, lo=0.0, lo_open=True),
        max_pool_size=_as_int(obj, "max_pool_size", 8, minimum=1),
        mode=_as_choice(obj, "mode", "pfeddil", MODES),
        seed=_as_int(obj, "seed", 0, minimum=0),
        km_include_self=_as_bool(obj, "km_include_self", False),
    )
    return ExperimentConfig(
        federation=fed,
        data=_parse_data(obj.get("data", {})),
        hidden_dims=_parse_arch(obj.get("arch", {})),
        negatives=_parse_negatives(obj.get("negatives", {})),
    )


def default_config() -> ExperimentConfig:
    return parse_config({})


def benchmark_config(**overrides) -> ExperimentConfig:
    """The desk-scale benchmark preset: default data and federation knobs
    with a shorter 80-round schedule. Keyword overrides use config-file
    key names; nested "data"/"arch"/"negatives" dicts merge shallowly."""
    doc: dict = {"rounds_per_task": 80}
    for key, value in overrides.items():
        if key in ("data", "arch", "negatives"):
            merged = dict(doc.get(key, {}))
            merged.update(value)
            doc[key] = merged
        else:
            doc[key] = value
    return parse_config(doc)


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file; parse errors carry line/column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, "
                          f"column {e.colno}: {e.msg}") from e
    return parse_config(obj)
