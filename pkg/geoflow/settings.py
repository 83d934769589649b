from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Iterable

from .errors import ConfigError

log = logging.getLogger(__name__)


SHAPES: tuple[str, ...] = ("sphere", "ellipsoid", "torus", "plane")
PERTURBATIONS: tuple[str, ...] = ("none", "linear", "exp")
FLOW_SCHEMES: tuple[str, ...] = ("explicit", "semi_implicit")
FUNCTIONALS: tuple[str, ...] = (
    "area",
    "willmore",
    "helfrich",
    "gauss",
    "aniso_diag",
    "mean_linear",
    "willmore_gauss",
    "zero",
)
MIN_KERNEL_RATIO: float = 2.0
THREADS_ENV: str = "GEOFLOW_THREADS"


@dataclass(frozen=True, slots=True)
class RunConfig:
    run: str = "geoflow"
    grid_h: float = 1.0 / 32.0
    grid_lower: tuple[float, float, float] = (-0.75, -0.75, -0.75)
    grid_upper: tuple[float, float, float] = (0.75, 0.75, 0.75)
    shape: str = "sphere"
    shape_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shape_radius: float = 0.5
    shape_semi_axes: tuple[float, float, float] = (0.5, 0.5, 0.3)
    shape_major: float = 0.5
    shape_minor: float = 0.2
    shape_perturb: str = "none"
    functional: str = "area"
    functional_c0: float = 0.0
    functional_m: tuple[float, float, float] = (1.0, 1.0, 4.0)
    kernel_ratio: float = 3.0
    flow_dt_safety: float = 0.9
    flow_steps: int = 100
    flow_redistance_every: int = 5
    flow_stop_grad_norm: float = 0.0
    flow_scheme: str = "explicit"
    flow_dt_scale: float = 1.0
    velocities: tuple[str, ...] = ("normal", "linear", "trig")
    validate_refine: bool = False
    output_dir: str = "."
    output_csv: str = ""
    output_vtk: str = ""
    output_vtk_stride: int = 10


def key_to_attr(key: str) -> str:
    return key.strip().replace(".", "_")


def attr_to_key(attr: str) -> str:
    head, _, tail = attr.partition("_")
    if head in ("grid", "shape", "functional", "kernel", "flow", "validate", "output") and tail:
        return f"{head}.{tail}"
    return attr


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    v = text.strip()
    if "/" in v:
        num, _, den = v.partition("/")
        try:
            return float(num) / float(den)
        except ZeroDivisionError:
            raise ValueError(f"division by zero: {text!r}") from None
    return float(v)


def _coerce(attr: str, text: str):
    kind = _FIELD_TYPES[attr]
    try:
        if kind == "float":
            return _parse_float(text)
        if kind == "int":
            return int(text.strip())
        if kind == "bool":
            return _parse_bool(text)
        if kind == "tuple[float, float, float]":
            parts = [p for p in text.replace(" ", "").split(",") if p]
            if len(parts) == 1:
                parts = parts * 3
            if len(parts) != 3:
                raise ValueError("expected 3 comma-separated values")
            return tuple(_parse_float(p) for p in parts)
        if kind == "tuple[str, ...]":
            return tuple(p.strip() for p in text.split(",") if p.strip())
        return text.strip()
    except ValueError as e:
        raise ConfigError(f"{attr_to_key(attr)}: {e}") from None


def parse_pairs(lines: Iterable[str]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        pairs[key.strip()] = value.strip()
    return pairs


def _validate(cfg: RunConfig) -> RunConfig:
    if not cfg.grid_h > 0:
        raise ConfigError("grid.h must be > 0")
    if any(u <= lo for lo, u in zip(cfg.grid_lower, cfg.grid_upper)):
        raise ConfigError("grid.upper must exceed grid.lower on every axis")
    if cfg.shape not in SHAPES:
        raise ConfigError(f"shape must be one of {', '.join(SHAPES)}")
    if cfg.shape_perturb not in PERTURBATIONS:
        raise ConfigError(f"shape.perturb must be one of {', '.join(PERTURBATIONS)}")
    if cfg.functional not in FUNCTIONALS:
        raise ConfigError(f"functional must be one of {', '.join(FUNCTIONALS)}")
    if cfg.kernel_ratio < MIN_KERNEL_RATIO:
        raise ConfigError(f"kernel.ratio must be >= {MIN_KERNEL_RATIO}")
    if cfg.flow_steps < 0:
        raise ConfigError("flow.steps must be >= 0")
    if cfg.flow_redistance_every < 1:
        raise ConfigError("flow.redistance_every must be >= 1")
    if cfg.flow_stop_grad_norm < 0:
        raise ConfigError("flow.stop_grad_norm must be >= 0")
    if cfg.flow_scheme not in FLOW_SCHEMES:
        raise ConfigError(f"flow.scheme must be one of {', '.join(FLOW_SCHEMES)}")
    if cfg.flow_dt_scale < 1:
        raise ConfigError("flow.dt_scale must be >= 1")
    if cfg.flow_scheme == "explicit" and cfg.flow_dt_scale != 1.0:
        raise ConfigError("flow.dt_scale > 1 needs flow.scheme = semi_implicit")

    updates = {}
    if not 0 < cfg.flow_dt_safety <= 1:
        clamped = min(max(cfg.flow_dt_safety, 0.05), 1.0)
        log.warning("flow.dt_safety=%g 超出范围，已调整为 %g", cfg.flow_dt_safety, clamped)
        updates["flow_dt_safety"] = clamped
    if cfg.output_vtk_stride <= 0:
        updates["output_vtk_stride"] = 10
    return replace(cfg, **updates) if updates else cfg


def apply_pairs(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    updates = {}
    for key, value in pairs.items():
        attr = key_to_attr(key)
        if attr not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        updates[attr] = _coerce(attr, value)
    return _validate(replace(cfg, **updates))


def load_config(path: str | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a ``key = value`` file and apply ``key=value`` overrides on top."""
    pairs: dict[str, str] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                pairs.update(parse_pairs(f))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    pairs.update(parse_pairs(overrides))
    return apply_pairs(RunConfig(), pairs)


def save_config(cfg: RunConfig, path: str) -> None:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{attr_to_key(f.name)} = {value}")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def threads_from_env() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 0
    try:
        count = int(raw)
    except ValueError:
        log.warning("环境变量 %s=%r 无效，已忽略", THREADS_ENV, raw)
        return 0
    return max(count, 0)
