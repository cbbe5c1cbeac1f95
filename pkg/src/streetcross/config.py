"""Run configuration: named presets, JSON files, ``key=value`` overrides and schema checks.

Resolution order: preset defaults, then the config file, then ``--set``
overrides. The result is validated against ``config_schema.json``.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

PAPER = {
    "preset": "paper",
    "seed": 0,
    "data_dir": "data",
    "out_dir": "runs",
    "checkpoint": None,
    "motion_checkpoint": None,
    "light_checkpoint": None,
    "input": None,
    "frame_rate": 2.5,
    "window": {"t_obs": 8, "t_pred": 12, "stride": 20, "n_max": 6},
    "synth": {
        "trajectory_scenes": 200,
        "max_agents": 6,
        "steps": 20,
        "test_fraction": 0.2,
        "signal_images": 500,
        "image_size": 40,
        "crossing_scenes": 1250,
        "signalized_fraction": 0.5,
        "crossing_agents": 4,
    },
    "mp": {
        "variant": "IA-TCNN",
        "kernel_size": 30,
        "filters": [128, 128, 128],
        "convs_per_block": 1,
        "lr": 5e-4,
        "epochs": 100,
        "batch_size": 12,
        "clip": 10.0,
    },
    "tl": {
        "widths": [16, 32, 64, 128, 256],
        "units": [2, 2, 2, 2, 2],
        "se_reduction": 4,
        "n_classes": 4,
        "input_size": 32,
        "dropout": 0.2,
        "lr": 4e-3,
        "momentum": 0.9,
        "decay_end_factor": 0.05,
        "epochs": 100,
        "batch_size": 32,
        "clip": 10.0,
    },
    "arcp": {
        "variant": "ARCP(TLR+MP)",
        "D": 128,
        "C": 32,
        "hidden": 512,
        "ncp_hidden": 64,
        "light_classes": 3,
        "lr": 5e-5,
        "epochs": 100,
        "batch_size": 10,
        "clip": 10.0,
        "cold_start": False,
    },
    "gradcheck": {"cases": 100, "model_cases": 100, "tolerance": 1e-4},
}

_DESK_CHANGES = {
    "preset": "desk",
    "mp": {"filters": [32, 32, 32], "lr": 1e-3, "epochs": 20},
    "tl": {"widths": [8, 16, 16, 32, 32], "epochs": 15},
    "arcp": {"lr": 3e-4, "epochs": 25},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def merge(base: dict, changes: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


PRESETS = {"paper": PAPER, "desk": merge(PAPER, _DESK_CHANGES)}


def schema() -> dict:
    return json.loads(resources.files("streetcross").joinpath("config_schema.json").read_text(encoding="utf-8"))


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".")]
    if not all(path):
        raise ConfigError(f"override {item!r} has an empty key component")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_override(cfg: dict, path: list[str], value) -> None:
    node = cfg
    for i, p in enumerate(path[:-1]):
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"{'.'.join(path[: i + 1])}: not a config section")
        node = node[p]
    node[path[-1]] = value


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errors))


def resolve(config_file=None, overrides=(), preset: str | None = None) -> dict:
    """Build the fully-resolved config."""
    user: dict = {}
    if config_file is not None:
        try:
            user = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {config_file} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_file}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{config_file}: top level must be a JSON object")
    parsed = [parse_override(o) for o in overrides]
    name = preset
    for path, value in parsed:
        if path == ["preset"]:
            name = value
    name = name or user.get("preset", "desk")
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    cfg = merge(PRESETS[name], user)
    for path, value in parsed:
        apply_override(cfg, path, value)
    validate(cfg)
    return cfg
