"""Run configuration: TOML files, ``--set`` overrides and schema validation.

A configuration is a TOML document with the tables ``metric``,
``scenario``, ``solver``, ``kernel``, ``oracle`` and ``output``.  Every
table is optional; missing keys take the defaults in :data:`DEFAULTS`.
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from typing import Any, Dict, Iterable, Optional

import jsonschema
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .geometry import FlatMetric, QuadraticNormalMetric, kappa_model, tensor_from_triplets

__all__ = ["DEFAULTS", "SCHEMA", "load_config", "apply_overrides", "validate", "config_hash",
           "build_metric"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num}
_posvec = {"type": "array", "items": _pos, "minItems": 1}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "metric": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 4},
                "kind": {"enum": ["flat", "quadratic", "kappa"]},
                "kappa": _num,
                "tensor": {
                    "type": "array",
                    "items": {"type": "array", "items": _num, "minItems": 5, "maxItems": 5},
                },
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t": _pos,
                "h": _pos,
                "x0": _vec,
                "y0": _vec,
                "targets": {"type": "array", "items": _vec},
                "t_grid": _posvec,
                "h_grid": _posvec,
                "flow_q0": _vec,
                "flow_p0": _vec,
                "n_samples": {"type": "integer", "minimum": 2},
                "ell": _pos,
                "vol": _pos,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rtol": _pos,
                "atol": _pos,
                "tol": _pos,
                "max_iter": {"type": "integer", "minimum": 1},
                "c": _pos,
                "r": _pos,
                "t0": _pos,
                "backend": {"enum": ["auto", "compiled", "python"]},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["bvp", "series", "both"]},
                "series_order": {"type": "integer", "minimum": 0, "maximum": 3},
                "fd_steps": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
                "x_box": _pos,
                "n_x": {"type": "integer", "minimum": 1},
                "n_y": {"type": "integer", "minimum": 2},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 1},
                "n_steps": {"type": "integer", "minimum": 10},
                "seed": {"type": "integer", "minimum": 0},
                "block_size": {"type": "integer", "minimum": 1},
                "bandwidth": {"enum": ["silverman", "whitened"]},
                "bandwidth_scale": _pos,
                "binary": {"type": "boolean"},
                "rel_tol": _pos,
                "n_sigma": _pos,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}

DEFAULTS: Dict[str, Any] = {
    "metric": {"dim": 1, "kind": "flat", "kappa": 0.25, "tensor": []},
    "scenario": {"t": 1.0, "h": 1.0, "t_grid": [0.4, 0.2, 0.1, 0.05],
                 "h_grid": [0.4, 0.2, 0.1, 0.05], "n_samples": 33},
    "solver": {"rtol": 1e-12, "atol": 1e-12, "tol": 1e-10, "max_iter": 30,
               "c": 0.1, "r": 0.25, "t0": 0.5, "backend": "auto"},
    "kernel": {"mode": "bvp", "series_order": 1, "x_box": 0.2, "n_x": 3, "n_y": 24},
    "oracle": {"n_paths": 100000, "n_steps": 200, "block_size": 65536,
               "bandwidth": "whitened", "bandwidth_scale": 0.5, "binary": False,
               "rel_tol": 0.05, "n_sigma": 3.0},
    "output": {"dir": ".", "prefix": ""},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    """Parse an override value with TOML syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` overrides; values use TOML syntax."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad override key {key!r}")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a value")
        node[parts[-1]] = _parse_value(text.strip())
    return cfg


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    d = cfg["metric"]["dim"]
    sc = cfg["scenario"]
    for key in ("x0", "y0", "flow_q0", "flow_p0"):
        if key in sc and len(sc[key]) != d:
            raise ConfigError(f"scenario.{key} must have {d} entries")
    for pt in sc.get("targets", []):
        if len(pt) != 2 * d:
            raise ConfigError(f"every target needs {2 * d} entries (x then y)")
    for row in cfg["metric"].get("tensor", []):
        if not all(float(v).is_integer() and 0 <= v < d for v in row[:4]):
            raise ConfigError(f"tensor index out of range in {row}")
    return cfg


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> dict:
    """Read, merge with defaults, override and validate a configuration."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = apply_overrides(raw, overrides)
    cfg = _merge(DEFAULTS, cfg)
    if cfg["metric"]["kind"] == "kappa":
        cfg["metric"]["dim"] = 2
    d = cfg["metric"]["dim"]
    cfg["scenario"].setdefault("x0", [0.0] * d)
    cfg["scenario"].setdefault("y0", [0.0] * d)
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of the configuration.

    The ``output`` table is left out: where results go does not change them.
    """
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_metric(cfg: dict):
    mc = cfg["metric"]
    kind, d = mc["kind"], mc["dim"]
    if kind == "flat":
        return FlatMetric(d)
    if kind == "kappa":
        return kappa_model(float(mc["kappa"]))
    try:
        return QuadraticNormalMetric(tensor_from_triplets(d, mc.get("tensor", [])))
    except ValueError as exc:
        raise ConfigError(f"metric.tensor: {exc}") from None


def as_array(v, d=None):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if d is not None and a.size != d:
        raise ConfigError(f"expected {d} entries, got {a.size}")
    return a
