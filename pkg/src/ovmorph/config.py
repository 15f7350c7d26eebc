"""Pipeline configuration: one JSON file, every key overridable by a flag.

The schema is a two-level mapping ``section -> key -> (type, default)``.  The
flag for ``stain.od_threshold`` is ``--stain.od_threshold``.  Relative paths in
a config file resolve against the file's directory; paths given as flags
resolve against the working directory.
"""
from __future__ import annotations

import copy
import json
import os
from typing import Any

from .errors import ValidationError
from .feature_io import POLICIES, TARGETS

REQUIRED = object()


def _csv_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        items = [str(v).strip() for v in value]
    else:
        items = [v.strip() for v in str(value).split(",")]
    return [v for v in items if v]


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _opt_int(value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        return None
    if isinstance(value, bool):
        raise ValueError("expected an integer")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


def _int(value):
    out = _opt_int(value)
    if out is None:
        raise ValueError("expected an integer")
    return out


def _float(value):
    if isinstance(value, bool):
        raise ValueError("expected a number")
    return float(value)


def _opt_path(value):
    return None if value in (None, "") else str(value)


SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "paths": {
        "manifest": (_opt_path, None),
        "labels": (_opt_path, None),
        "embeddings": (_opt_path, None),
        "reference": (_opt_path, None),  # None -> bundled reference
        "out": (_opt_path, "out"),
    },
    "stain": {
        "background_intensity": (_float, 255.0),
        "od_threshold": (_float, 0.15),
        "angle_percentile": (_float, 1.0),
        "min_tissue_pixels": (_int, 100),
    },
    "morphometry": {
        "min_area": (_int, 10),
        "exclude_border": (_bool, True),
        "normalize": (_bool, True),  # stain-normalize patches before measuring intensity
    },
    "fusion": {
        "policy": (str, "require-embedding"),
        "standardize": (_bool, False),
    },
    "forest": {
        "n_trees": (_int, 200),
        "max_depth": (_opt_int, None),
        "min_samples_leaf": (_int, 1),
        "mtry": (_opt_int, None),
        "bootstrap": (_bool, True),
    },
    "cv": {
        "k": (_int, 5),
        "policies": (_csv_list, ["require-embedding", "morphometric-only"]),
        "targets": (_csv_list, list(TARGETS)),
        "strict": (_bool, True),
    },
    "evaluation": {
        "unit": (str, "both"),
    },
    "analysis": {
        "n_components": (_int, 2),
        "standardize": (_bool, True),
    },
    "run": {
        "seed": (_opt_int, REQUIRED),
        "workers": (_int, 1),
        "max_error_rate": (_float, 0.0),
    },
    "fixtures": {
        "n_cases": (_int, 60),
        "patches_per_case": (_int, 3),
        "patch_size": (_int, 128),
        "embedding_dim": (_int, 16),
    },
}

PATH_KEYS = tuple(SCHEMA["paths"])
UNITS = ("patch", "case", "both")


def defaults() -> dict:
    return {
        sec: {k: (None if d is REQUIRED else copy.deepcopy(d)) for k, (_, d) in keys.items()}
        for sec, keys in SCHEMA.items()
    }


def _coerce(section: str, key: str, value):
    if section not in SCHEMA:
        raise ValidationError(f"unknown config section {section!r}")
    if key not in SCHEMA[section]:
        raise ValidationError(f"unknown config key {section}.{key}")
    conv = SCHEMA[section][key][0]
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad value for {section}.{key}: {exc}") from None


def load(path=None) -> dict:
    """Defaults merged with ``path`` (if given); relative paths resolved against it."""
    cfg = defaults()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config root must be an object")
    base = os.path.dirname(os.path.abspath(path))
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ValidationError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ValidationError(f"config section {section!r} must be an object")
        for key, value in body.items():
            cfg[section][key] = _coerce(section, key, value)
    for key in PATH_KEYS:
        p = cfg["paths"][key]
        if p is not None and not os.path.isabs(p):
            cfg["paths"][key] = os.path.normpath(os.path.join(base, p))
    return cfg


def override(cfg: dict, dotted: str, value) -> None:
    section, _, key = dotted.partition(".")
    cfg[section][key] = _coerce(section, key, value)


def validate(cfg: dict) -> dict:
    """Semantic checks shared by every command; returns ``cfg``."""
    if cfg["run"]["seed"] is None:
        raise ValidationError("run.seed is required (set it in the config or pass --seed)")
    if cfg["run"]["workers"] < 1:
        raise ValidationError("run.workers must be >= 1")
    if not 0.0 <= cfg["run"]["max_error_rate"] <= 1.0:
        raise ValidationError("run.max_error_rate must lie in [0, 1]")
    if cfg["fusion"]["policy"] not in POLICIES:
        raise ValidationError(f"fusion.policy must be one of {POLICIES}")
    for p in cfg["cv"]["policies"]:
        if p not in POLICIES:
            raise ValidationError(f"cv.policies entry {p!r} is not one of {POLICIES}")
    for t in cfg["cv"]["targets"]:
        if t not in TARGETS:
            raise ValidationError(f"cv.targets entry {t!r} is not one of {TARGETS}")
    if cfg["cv"]["k"] < 2:
        raise ValidationError("cv.k must be >= 2")
    if cfg["evaluation"]["unit"] not in UNITS:
        raise ValidationError(f"evaluation.unit must be one of {UNITS}")
    if cfg["analysis"]["n_components"] < 1:
        raise ValidationError("analysis.n_components must be >= 1")
    if cfg["paths"]["out"] is None:
        raise ValidationError("paths.out is required")
    return cfg


def require_paths(cfg: dict, *keys: str) -> None:
    """Check that the named ``paths`` entries are set and exist."""
    for key in keys:
        p = cfg["paths"][key]
        if p is None:
            raise ValidationError(f"paths.{key} is required for this command")
        if not os.path.exists(p):
            raise ValidationError(f"paths.{key} does not exist: {p}")


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
