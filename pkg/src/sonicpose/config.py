"""Experiment configuration: YAML documents validated into frozen dataclasses.

Unknown keys and ill-typed values raise :class:`ConfigError` naming the
dotted field path, e.g. ``attack.magnitude``.
"""

from __future__ import annotations

import copy
import dataclasses
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .trace_model import CHANNELS
from .vio_estimator import PRESETS, EstimatorConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass(frozen=True)
class TraceSpec:
    kind: str = "walk"  # walk | stationary | window | file
    length_m: float = 4.0
    duration_s: float = 10.0
    imu_rate: float = 200.0
    fix_rate: float = 20.0
    noise: tuple[float, float] = (0.02, 0.002)
    waypoints: Optional[list[list[float]]] = None  # rows of t, x, y, z
    path: Optional[str] = None

    def check(self, at):
        if self.kind not in ("walk", "stationary", "window", "file"):
            raise ConfigError(f"{at}.kind", f"unknown trace kind {self.kind!r}")
        if self.kind == "file":
            if not self.path:
                raise ConfigError(f"{at}.path", "required for kind 'file'")
            if not Path(self.path).exists():
                raise ConfigError(f"{at}.path", f"{self.path} does not exist")
        if self.kind == "window":
            if not self.waypoints or len(self.waypoints) < 2 or any(len(w) != 4 for w in self.waypoints):
                raise ConfigError(f"{at}.waypoints", "need >= 2 rows of [t, x, y, z]")
        if not (self.duration_s > 0 and self.imu_rate > 0 and self.fix_rate > 0):
            raise ConfigError(at, "duration and rates must be positive")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"  # none | constant | tone | gmm
    enabled: bool = True
    channel: str = "accel_x"
    # constant
    magnitude: float = 0.0
    # tone
    frequency: Optional[float] = None  # None picks the DC alias of the channel resonance
    amplitude: float = 1.0  # full-volume amplitude at unity coupling
    volume_ratio: float = 1.0
    phase: float = 0.0
    profile: str = "hololens2"
    half_width: float = 100.0
    defense: str = "none"
    max_jitter: float = 0.0
    # gmm
    components: Optional[list[dict]] = None
    model_file: Optional[str] = None
    # window: seconds, or trace fractions when window_fraction is set
    window: tuple[float, float] = (0.0, math.inf)
    window_fraction: Optional[tuple[float, float]] = None

    def check(self, at):
        if self.kind not in ("none", "constant", "tone", "gmm"):
            raise ConfigError(f"{at}.kind", f"unknown attack kind {self.kind!r}")
        if self.channel not in CHANNELS:
            raise ConfigError(f"{at}.channel", f"unknown channel {self.channel!r}")
        if self.profile not in ("hololens2", "flat"):
            raise ConfigError(f"{at}.profile", f"unknown resonance profile {self.profile!r}")
        if self.volume_ratio < 0:
            raise ConfigError(f"{at}.volume_ratio", "must be non-negative")
        if self.kind == "gmm" and not (self.components or self.model_file):
            raise ConfigError(f"{at}.components", "gmm attack needs components or model_file")
        if self.model_file and not Path(self.model_file).exists():
            raise ConfigError(f"{at}.model_file", f"{self.model_file} does not exist")
        if not self.window[0] < self.window[1]:
            raise ConfigError(f"{at}.window", "start must be before end")
        if self.window_fraction is not None:
            a, b = self.window_fraction
            if not 0 <= a < b <= 1:
                raise ConfigError(f"{at}.window_fraction", "need 0 <= start < end <= 1")


@dataclass(frozen=True)
class EstimatorSpec:
    preset: str = "reset"
    fusion_gain: Optional[float] = None
    velocity_gain: Optional[float] = None
    bias_gain: Optional[float] = None
    reject_threshold: Optional[float] = None
    reject_count: Optional[int] = None
    reject_angle: Optional[float] = None
    recovery: Optional[str] = None
    zupt: Optional[bool] = None
    motion_threshold: Optional[float] = None
    still_distance: Optional[float] = None
    zupt_window: Optional[float] = None

    def check(self, at):
        if self.preset not in PRESETS:
            raise ConfigError(f"{at}.preset", f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        try:
            self.build()
        except ValueError as exc:
            raise ConfigError(at, str(exc)) from None

    def build(self) -> EstimatorConfig:
        over = {
            f.name: getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.name != "preset" and getattr(self, f.name) is not None
        }
        return EstimatorConfig.preset(self.preset, **over)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: list[Any]

    def check(self, at):
        if not self.values:
            raise ConfigError(f"{at}.values", "sweep values must be non-empty")
        head = self.variable.split(".")[0]
        if head not in ("trace", "attack", "estimator", "scene"):
            raise ConfigError(f"{at}.variable", f"cannot sweep {self.variable!r}")


@dataclass(frozen=True)
class SceneSpecConfig:
    kind: str  # headlock | blocking | zone
    anchor: tuple[float, float, float] = (3.0, 2.0, 0.0)
    wall_lo: tuple[float, float, float] = (-1.5, 2.0, -1.0)
    wall_hi: tuple[float, float, float] = (1.5, 2.2, 1.5)
    target: tuple[float, float, float] = (0.0, 12.0, 0.0)
    zones: Optional[list[dict]] = None  # {id, lo, hi, owner}
    placements: Optional[list[dict]] = None  # {t, id, offset, placer}
    eval_start: float = 0.0
    fov_deg: tuple[float, float] = (43.0, 29.0)

    def check(self, at):
        if self.kind not in ("headlock", "blocking", "zone"):
            raise ConfigError(f"{at}.kind", f"unknown scene kind {self.kind!r}")
        if self.kind == "zone" and not (self.zones and self.placements):
            raise ConfigError(f"{at}.zones", "zone scene needs zones and placements")
        for name, item_keys in (("zones", {"id", "lo", "hi", "owner"}), ("placements", {"t", "id", "offset", "placer"})):
            for i, item in enumerate(getattr(self, name) or []):
                if not isinstance(item, dict) or set(item) != item_keys:
                    raise ConfigError(f"{at}.{name}[{i}]", f"expected keys {sorted(item_keys)}")


@dataclass(frozen=True)
class OutcomeSpec:
    mislead_min: float = 0.25
    drift_bound: float = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    trials: int = 1
    seed: int = 0
    trace: TraceSpec = field(default_factory=TraceSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    sweep: Optional[SweepSpec] = None
    scene: Optional[SceneSpecConfig] = None
    outcome: OutcomeSpec = field(default_factory=OutcomeSpec)
    jobs: int = 1
    save_trajectories: bool = True
    description: str = ""

    def check(self, at=""):
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs", "must be >= 1")
        for name in ("trace", "attack", "estimator", "sweep", "scene"):
            sub = getattr(self, name)
            if sub is not None:
                sub.check(name)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one dotted field replaced (re-validated)."""
        doc = self.to_dict()
        node = doc
        parts = dotted.split(".")
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
        return from_dict(doc)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(tp, value, at):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, at)
    if tp is Any:
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, at)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(at, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(at, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str) and value.strip().lower() in (".inf", "inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(at, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(at, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(at, f"expected a list of {len(args)} items")
        return tuple(_coerce(a, v, f"{at}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(at, "expected a list")
        return [_coerce(args[0], v, f"{at}[{i}]") for i, v in enumerate(value)]
    if origin is dict or tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(at, "expected a mapping")
        return dict(value)
    return value


def _build(cls, data, at=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(at, "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{at}.{key}" if at else str(key), "unknown key")
    kwargs = {}
    for name, f in names.items():
        sub = f"{at}.{name}" if at else name
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "required")
    return cls(**kwargs)


def from_dict(doc: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, copy.deepcopy(doc))
    cfg.check()
    return cfg


def bundled_scenarios() -> list[str]:
    root = resources.files("sonicpose") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    name = name_or_path.replace("_", "-")
    if name.endswith(".yaml"):
        name = name[:-5]
    bundled = resources.files("sonicpose") / "scenarios" / f"{name}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError("config", f"no config file or bundled scenario named {name_or_path!r}")


def load_config(name_or_path: str) -> ExperimentConfig:
    path = resolve_config_path(name_or_path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: invalid YAML ({exc})") from None
    return from_dict(doc)
