"""Experiment configuration: an INI file with one ``[experiment]`` section.

Example::

    [experiment]
    kind = fit-pose
    width = 128
    height = 128
    optimizer = lm
    iters = 60
    seed = 3

Unknown keys are rejected.  Command-line flags override file values.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

KINDS = ("render", "gradviz", "fit-pose", "fit-mesh", "fit-spline", "fit-implicit")
OPTIMIZERS = ("adam", "gd", "lm")

# per-kind defaults applied when the key is not set explicitly
_DEFAULTS = {
    "render": {"width": 128, "height": 128, "iters": 0},
    "gradviz": {"width": 256, "height": 256, "iters": 0},
    "fit-pose": {"optimizer": "lm", "iters": 60, "lr": 0.02},
    "fit-mesh": {"optimizer": "adam", "iters": 300, "lr": 0.01},
    "fit-spline": {"optimizer": "adam", "iters": 200, "lr": 0.01},
    "fit-implicit": {"optimizer": "adam", "iters": 400, "lr": 0.01},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "render"
    out: str = "out"
    width: int = 128
    height: int = 128
    fov_deg: float = 40.0
    layers: int = 2
    seed: int = 0
    optimizer: str = "adam"
    iters: int = 100
    lr: float = 0.01
    workers: int = 1
    # scene
    mesh: Optional[str] = None
    variant: str = ""  # implicit: sphere-union | swept-sphere; gradviz: translate | occlusion
    # pose
    perturb_deg: float = 10.0
    perturb_frac: float = 0.05
    fast_pose: bool = False
    # mesh fit
    reg_weight: float = 0.5
    colors_only: bool = False
    # implicit
    grid: int = 50
    spheres: int = 200
    explicit: frozenset = field(default_factory=frozenset, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind '{self.kind}' (choose from {', '.join(KINDS)})")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.width < 16 or self.height < 16:
            raise ConfigError("image size must be at least 16x16")
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if self.iters < 0:
            raise ConfigError("iteration count must be non-negative")
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.mesh is not None and not os.path.isfile(self.mesh):
            raise ConfigError(f"mesh file not found: {self.mesh}")

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        given = {k: v for k, v in kwargs.items() if v is not None}
        return _build(dataclasses.asdict(self) | given, set(self.explicit) | set(given))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name != "explicit"}


def _coerce(name: str, raw):
    kind = _FIELDS[name].type
    if not isinstance(raw, str):
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw}")
    if kind == "Optional[str]":
        return raw or None
    return raw


def _build(values: dict, explicit: set) -> ExperimentConfig:
    values = {k: v for k, v in values.items() if k != "explicit"}
    kind = values.get("kind", "render")
    for key, default in _DEFAULTS.get(kind, {}).items():
        if key not in explicit:
            values[key] = default
    try:
        typed = {k: _coerce(k, v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(**typed, explicit=frozenset(explicit))


def default_config(kind: str, **overrides) -> ExperimentConfig:
    return _build({"kind": kind, **overrides}, set(overrides))


def load_config(path, **overrides) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    values = dict(parser.items("experiment"))
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if values.get("mesh"):
        values["mesh"] = os.path.join(os.path.dirname(os.path.abspath(path)), values["mesh"])
    given = {k: v for k, v in overrides.items() if v is not None}
    values.update(given)
    return _build(values, set(values))
