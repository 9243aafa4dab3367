# core/config.py
"""
Layered configuration: dataclass defaults < YAML file < PICKPLACE_* environment
variables < command-line flags.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from core.errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContactCfg:
    threshold: float = 0.05          # proximity threshold [m]
    grasp_clearance: float = 0.02    # min hand clearance of synthesized grasps to non-target geometry [m]
    held_radius: float = 0.002       # sphere radius of the attached object cloud [m]
    held_points: int = 64


@dataclass(frozen=True)
class DenoiseCfg:
    steps: int = 100
    dt: float = 1.0
    batch: int = 4
    sigma_angular: float = 0.3
    sigma_linear: float = 0.1
    validity_threshold: float = 0.5
    approach_weight: float = 10.0
    stabilization: bool = True
    init_retries: int = 50
    init_height: tuple[float, float] = (0.18, 0.28)
    init_radius: float = 0.08
    safeguard_halvings: int = 6
    use_validity_filter: bool = True
    sort_by_score: bool = True
    condition_on_bin: bool = True
    placement_tolerance: tuple[float, float] = (0.01, 0.05)   # [m], [rad]


@dataclass(frozen=True)
class TrajectoryCfg:
    resolution_m: float = 0.005
    resolution_rad: float = 0.02
    max_joint_step: float = 0.05
    tracking_tolerance: tuple[float, float] = (1e-3, 1e-2)
    track_iterations: int = 3


@dataclass(frozen=True)
class PrmCfg:
    samples: int = 500
    neighbors: int = 10
    cartesian_step: float = 0.005
    reach: float = 1.0               # upper bound on link-point distance from any joint axis [m]
    max_joint_step: float = 0.05


@dataclass(frozen=True)
class BenchCfg:
    trials: int = 30
    scenarios: tuple[str, ...] = ("easy", "far-pick", "obstructed-place")
    methods: tuple[str, ...] = ("ours", "baseline")
    yaw_candidates: int = 12
    max_detections_per_scene: int = 5


@dataclass(frozen=True)
class RunCfg:
    seed: int = 0
    out: str = "out"
    chain: Optional[str] = None
    guidance: str = "oracle"             # oracle | external
    guidance_command: Optional[str] = None
    guidance_timeout: float = 10.0
    bin_order: tuple[str, ...] = ("high", "mid", "low")
    run_log: bool = True
    contact: ContactCfg = field(default_factory=ContactCfg)
    denoise: DenoiseCfg = field(default_factory=DenoiseCfg)
    trajectory: TrajectoryCfg = field(default_factory=TrajectoryCfg)
    prm: PrmCfg = field(default_factory=PrmCfg)
    bench: BenchCfg = field(default_factory=BenchCfg)


_SECTIONS = {"contact": ContactCfg, "denoise": DenoiseCfg, "trajectory": TrajectoryCfg, "prm": PrmCfg, "bench": BenchCfg}

# env var -> (section or None, key, type)
_ENV = {
    "PICKPLACE_SEED": (None, "seed", int),
    "PICKPLACE_OUT": (None, "out", str),
    "PICKPLACE_BATCH": ("denoise", "batch", int),
    "PICKPLACE_STEPS": ("denoise", "steps", int),
}


def _coerce(cls, key: str, value: Any, where: str):
    names = {f.name: f for f in fields(cls)}
    if key not in names:
        raise InputError(f"unknown config key {where}{key!r}")
    default = getattr(cls(), key)
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InputError(f"config key {where}{key!r} must be true/false")
        return value
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return value


def _section(cls, doc: Optional[dict], where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise InputError(f"config section {where!r} must be a mapping")
    return cls(**{k: _coerce(cls, k, v, f"{where}.") for k, v in doc.items()})


def from_dict(doc: dict) -> RunCfg:
    doc = dict(doc or {})
    sections = {name: _section(cls, doc.pop(name, None), name) for name, cls in _SECTIONS.items()}
    top = {k: _coerce(RunCfg, k, v, "") for k, v in doc.items()}
    return RunCfg(**top, **sections)


def load_config(path: Optional[str | Path] = None, environ: Optional[dict] = None) -> RunCfg:
    doc: dict = {}
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InputError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise InputError(f"config {path} must be a mapping at the top level")
    cfg = from_dict(doc)
    return apply_env(cfg, os.environ if environ is None else environ)


def apply_env(cfg: RunCfg, environ) -> RunCfg:
    for var, (section, key, typ) in _ENV.items():
        raw = environ.get(var)
        if raw is None or raw == "":
            continue
        try:
            value = typ(raw)
        except ValueError as e:
            raise InputError(f"{var}={raw!r} is not a valid {typ.__name__}") from e
        cfg = override(cfg, section, **{key: value})
        log.debug("config %s from %s", key, var)
    return cfg


def override(cfg: RunCfg, section: Optional[str] = None, **values) -> RunCfg:
    """Copy of ``cfg`` with the given keys replaced (None values are ignored)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section is None:
        return replace(cfg, **values)
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
