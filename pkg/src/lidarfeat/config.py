"""Layered pipeline configuration: defaults, a JSON file, then ``--set`` overrides."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import LidarFeatError


class ConfigError(LidarFeatError):
    pass


DEFAULTS = {
    "seed": 0,
    "scanner": {
        "preset": "os1-64",
        "range_noise_sigma": 0.01,
        "dropout_rate": 0.02,
        "max_range": 60.0,
        "falloff": 0.0,
    },
    "scene": {"seed": 3, "room_texture": "plain", "size": [40.0, 40.0, 8.0], "n_objects": 14},
    "trajectory": {"kind": "square", "side": 10.0, "steps": 40, "dt": 0.1},
    "pairgen": {
        "mode": "real",
        "inner_radius": 1.0,
        "outer_radius": 5.0,
        "overlap_threshold": 0.2,
        "correspondence_distance": 0.2,
        "occlusion_margin": 0.5,
        "anchor_stride": 1,
        "synthetic_count": 20,
        "scale": [1.0, 1.25],
        "max_u_shift": 50,
        "max_v_shift": 0,
        "max_tilt": 20.0,
    },
    "network": {
        "descriptor_dim": 32,
        "layers": [[32, 3, 1], [32, 3, 1], [64, 3, 2], [64, 3, 4], [128, 3, 1]],
        "patch_size": 8,
        "batch_size": 4,
        "weight_repeat": 1.0,
        "weight_peaky": 0.5,
        "weight_reliab": 1.0,
        "ap_window": 16,
        "ap_ignore": 2,
        "ap_bins": 20,
        "ap_kappa": 0.5,
        "ap_stride": 1,
    },
    "train": {
        "epochs": [3, 20],
        "lr": 1e-3,
        "momentum": 0.9,
        "max_steps": None,
        "crop": [64, 180],
        "noise_var": 0.04,
        "offset": 0.1,
        "scale": 0.1,
    },
    "extract": {"score_threshold": 0.7, "nms_radius": 8},
    "register": {"iterations": 1000, "inlier_dist": 0.3, "icp_iterations": 0, "icp_corr_dist": 0.5},
    "bench": {"tau1": 0.3, "tau2": 0.2, "tau3": 0.3},
    "mapping": {
        "words": 180,
        "hist_threshold": 0.8,
        "min_gap": 10,
        "min_inliers": 15,
        "lm_max_iter": 100,
        "lm_lambda": 1e-3,
    },
}


def _kind(v):
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, list):
        return "list"
    if isinstance(v, dict):
        return "dict"
    return "null"


def _merge(base, layer, path=""):
    for key, val in layer.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        cur = base[key]
        if isinstance(cur, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be a section")
            _merge(cur, val, where + ".")
        else:
            if cur is not None and val is not None and _kind(cur) != _kind(val):
                raise ConfigError(f"'{where}' expects a {_kind(cur)}, got {json.dumps(val)}")
            base[key] = val


def parse_override(text):
    """``a.b.c=value`` -> nested dict; the value is JSON if it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    out = cur = {}
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = val
    return out


def resolve(config_path=None, overrides=(), extra=None) -> dict:
    """Defaults, then the JSON file, then ``extra`` (a dict), then each override."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        try:
            layer = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: {exc}") from exc
        if not isinstance(layer, dict):
            raise ConfigError(f"{config_path}: top level must be an object")
        _merge(cfg, layer)
    if extra:
        _merge(cfg, extra)
    for o in overrides:
        _merge(cfg, parse_override(o))
    return cfg


def dump(cfg) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
