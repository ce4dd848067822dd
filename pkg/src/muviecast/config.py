"""Run configuration: defaults, YAML file loading, CLI overrides.

A run is described by one nested mapping. Every key can come from three
places, later wins: built-in defaults, a YAML config file, CLI overrides.
Weights paths left null fall back to files under $MUVIECAST_WEIGHTS_DIR
when that is set.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .errors import ConfigError

ARCH_PRESETS = {
    # transfer backbone, feature extractor, style loss, matcher size, lr
    "casmvsnet_unet": {
        "transfer": "unet", "perceptual": "vgg16_trim",
        "style_loss": "gram", "feature_base": 21, "learning_rate": 1e-3},
    "casmvsnet_adain": {
        "transfer": "adain", "perceptual": "vgg19_trim",
        "style_loss": "in_stats", "feature_base": 21, "learning_rate": 1e-4},
    "patchmatchnet_unet": {
        "transfer": "unet", "perceptual": "vgg16_trim",
        "style_loss": "gram", "feature_base": 10, "learning_rate": 1e-3},
    "patchmatchnet_adain": {
        "transfer": "adain", "perceptual": "vgg19_trim",
        "style_loss": "in_stats", "feature_base": 10, "learning_rate": 1e-4},
}

WEIGHTS_DIR_ENV = "MUVIECAST_WEIGHTS_DIR"

DEFAULTS = {
    "scene": None,
    "style": None,
    "out": "out",
    "arch": "casmvsnet_unet",
    "seed": 0,
    "device": "cpu",
    "epochs": 10,
    "window": 3,
    "batch_size": 1,
    "color_adjust": "off",          # pre | post | off
    "resolution_scale": 1.0,        # lower this if memory runs out
    "optimizer": "adam",
    "learning_rate": None,          # null -> per-arch preset value
    "loss": {
        "content": 1.0,
        "style": 1.0,
        "imgeom": 1.0,
        "volume": 1.0,
        "depth": 1.0,
        "grad": 1.0,
        "laplace": 1.0,
        "canny": 1.0,
        "tv": 0.0,
        "nnfm": 0.0,
    },
    "geometry": {
        "backend": "plane_sweep_ref",
        "weights_path": None,
    },
    "perceptual": {
        "weights_path": None,
    },
    "transfer": {
        "init_weights_path": None,
    },
}


def _deep_merge(base: dict, extra: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _coerce(key: str, raw: str):
    """Parse a CLI override string to the default's type for that key."""
    if raw.lower() in ("null", "none"):
        return None
    node = DEFAULTS
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    try:
        if isinstance(node, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(node, int) and not isinstance(node, bool):
            return int(raw)
        if isinstance(node, float):
            return float(raw)
        if node is None and key in ("epochs", "seed", "batch_size"):
            return int(raw)
        if node is None and key in ("learning_rate", "resolution_scale"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for config key {key!r}: {raw!r}") from exc
    return raw


def load_config(path=None, overrides: dict = None) -> dict:
    """Resolve the full configuration mapping.

    path: optional YAML file; overrides: {dotted.key: value} applied last,
    values may be strings (coerced) or already-typed.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {p}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {p} must hold a mapping")
        cfg = _deep_merge(cfg, loaded)
    for key, value in (overrides or {}).items():
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _coerce(key, value) if isinstance(value, str) else value
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    if cfg["arch"] not in ARCH_PRESETS:
        raise ConfigError(
            f"unknown arch {cfg['arch']!r}; choose from {sorted(ARCH_PRESETS)}")
    if cfg["color_adjust"] not in ("pre", "post", "off"):
        raise ConfigError("color_adjust must be pre, post, or off")
    if cfg["epochs"] < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg["window"] < 2:
        raise ConfigError("window must be >= 2")
    if cfg["resolution_scale"] <= 0:
        raise ConfigError("resolution_scale must be > 0")
    backend = cfg["geometry"]["backend"]
    if not (backend == "plane_sweep_ref" or str(backend).startswith("external:")):
        raise ConfigError(f"unknown geometry backend {backend!r}")


def resolve_weights_path(configured, filename: str):
    """Explicit path wins; else $MUVIECAST_WEIGHTS_DIR/<filename> if present."""
    if configured:
        return configured
    root = os.environ.get(WEIGHTS_DIR_ENV)
    if root:
        candidate = Path(root) / filename
        if candidate.exists():
            return str(candidate)
    return None


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, default_flow_style=False, sort_keys=True)
