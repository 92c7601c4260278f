"""Scenario configuration files (YAML) and their defaults.

Every dataclass default in the library is reachable from a config key; the
``defaults`` command prints the full tree.  Unknown keys are rejected with
their dotted path so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from pathlib import Path

import yaml

from .attack import BiasAngle, FixedTarget, GaussianOffset, SpoofConfig, bearing_offset_target
from .control import ControllerConfig, PidGains
from .dynamics import SignConvention, VehicleParams
from .estimation import EkfConfig
from .navigation import GeoPoint, GpsNoiseModel, Mission, circular_mission, straight_mission
from .simulation import Scenario, SensorNoise

DEFAULT_HOME = (32.2319, -110.9501)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")
        self.key = key
        self.line = line


def to_plain(obj):
    """Dataclasses, enums and tuples as YAML-friendly builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, enum.Enum):
        return obj.name.lower()
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def from_plain(cls, data, key: str, default=None):
    """Build dataclass ``cls`` from a mapping, keeping defaults for absent keys."""
    default = cls() if default is None else default
    if data is None:
        return default
    if not isinstance(data, dict):
        raise ConfigError(key, f"expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kwargs = {f: getattr(default, f) for f in names}
    for name, value in data.items():
        path = f"{key}.{name}"
        if name not in names:
            raise ConfigError(path, "unknown key")
        current = getattr(default, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = from_plain(type(current), value, path, current)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(path, "expected a list")
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(path, "expected true or false")
            kwargs[name] = value
        elif isinstance(current, int) and not isinstance(current, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(path, "expected an integer")
            kwargs[name] = value
        elif isinstance(current, float):
            try:
                kwargs[name] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(path, f"expected a number, got {value!r}") from None
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


def _point(value, key: str) -> GeoPoint:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(key, "expected [lat, lon] in decimal degrees")
    try:
        return GeoPoint(float(value[0]), float(value[1]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


MISSION_DEFAULTS = {
    "home": list(DEFAULT_HOME),
    "circle": {"radius": 5.0, "n_waypoints": 7, "start_bearing": 0.0, "clockwise": False},
    "acceptance_radius": 2.0,
    "loop": False,
}


def build_mission(data: dict | None) -> Mission:
    """``waypoints`` lists points explicitly; ``circle`` or ``straight`` generate them."""
    data = dict(MISSION_DEFAULTS if data is None else data)
    allowed = {"home", "waypoints", "circle", "straight", "acceptance_radius", "loop"}
    for k in data:
        if k not in allowed:
            raise ConfigError(f"mission.{k}", "unknown key")
    home = _point(data.get("home", DEFAULT_HOME), "mission.home")
    radius = float(data.get("acceptance_radius", 2.0))
    loop = bool(data.get("loop", False))
    shapes = [k for k in ("waypoints", "circle", "straight") if k in data]
    if len(shapes) != 1:
        raise ConfigError("mission", "give exactly one of waypoints, circle, straight")
    try:
        if "waypoints" in data:
            pts = tuple(_point(p, f"mission.waypoints[{i}]") for i, p in enumerate(data["waypoints"]))
            return Mission(home, pts, radius, loop)
        if "circle" in data:
            c = data["circle"] or {}
            unknown = set(c) - {"radius", "n_waypoints", "start_bearing", "clockwise"}
            if unknown:
                raise ConfigError(f"mission.circle.{sorted(unknown)[0]}", "unknown key")
            return circular_mission(home, float(c.get("radius", 5.0)), int(c.get("n_waypoints", 7)),
                                    start_bearing=float(c.get("start_bearing", 0.0)),
                                    clockwise=bool(c.get("clockwise", False)),
                                    acceptance_radius=radius, loop=loop)
        s = data["straight"] or {}
        unknown = set(s) - {"length", "bearing"}
        if unknown:
            raise ConfigError(f"mission.straight.{sorted(unknown)[0]}", "unknown key")
        return straight_mission(home, float(s.get("length", 20.0)), float(s.get("bearing", 0.0)),
                                acceptance_radius=radius, loop=loop)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("mission", str(exc)) from None


def build_spoof(data: dict | None, home: GeoPoint) -> SpoofConfig | None:
    """Attack block.  ``fixed_target`` takes ``target: [lat, lon]`` or
    ``target_offset: {distance, bearing}`` (m, compass rad) relative to home."""
    if not data:
        return None
    data = dict(data)
    mode = data.pop("mode", "fixed_target")
    try:
        if mode == "fixed_target":
            if "target" in data:
                target = _point(data.pop("target"), "spoof.target")
            else:
                off = data.pop("target_offset", {"distance": 500.0, "bearing": math.pi / 2})
                target = bearing_offset_target(home, float(off["distance"]), float(off["bearing"]))
            m = FixedTarget(target)
        elif mode == "bias_angle":
            m = BiasAngle(float(data.pop("theta", 0.0)))
        elif mode == "gaussian_offset":
            m = GaussianOffset(tuple(data.pop("mu", (0.0, 0.0))), tuple(data.pop("sigma", (0.0, 0.0))))
        else:
            raise ConfigError("spoof.mode", f"unknown mode {mode!r}")
        allowed = {"start", "duration", "capture_delay", "masking_sigma", "hdop_inflation"}
        for k in data:
            if k not in allowed:
                raise ConfigError(f"spoof.{k}", "unknown key")
        return SpoofConfig(m, float(data.get("start", 10.0)), float(data.get("duration", 300.0)),
                           **{k: float(data[k]) for k in ("capture_delay", "masking_sigma", "hdop_inflation")
                              if k in data})
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("spoof", str(exc)) from None


SCALARS = ("seed", "dt_control", "gps_rate", "feature_rate", "duration", "v_target")


def default_config() -> dict:
    """The complete default tree, as written by the ``defaults`` command."""
    sc = Scenario(circular_mission(GeoPoint(*DEFAULT_HOME), 5.0, 7))
    tree = {name: to_plain(getattr(sc, name)) for name in SCALARS}
    tree["duration"] = 300.0
    tree["convention"] = to_plain(sc.convention)
    tree["mission"] = to_plain(MISSION_DEFAULTS)
    for name in ("vehicle", "controller", "ekf", "gps_noise", "sensor_noise"):
        tree[name] = to_plain(getattr(sc, name))
    tree["spoof"] = None
    return tree


def build_scenario(data: dict | None) -> Scenario:
    data = dict(data or {})
    known = set(SCALARS) | {"convention", "mission", "vehicle", "controller", "ekf", "gps_noise",
                            "sensor_noise", "spoof"}
    for k in data:
        if k not in known:
            raise ConfigError(k, "unknown key")
    mission = build_mission(data.get("mission"))
    kwargs = {}
    for name in SCALARS:
        if data.get(name) is not None:
            kwargs[name] = int(data[name]) if name == "seed" else float(data[name])
    kwargs.setdefault("duration", 300.0)
    if "convention" in data:
        try:
            kwargs["convention"] = SignConvention[str(data["convention"]).upper()]
        except KeyError:
            raise ConfigError("convention", f"choose from {[c.name.lower() for c in SignConvention]}") from None
    classes = {"vehicle": VehicleParams, "controller": ControllerConfig, "ekf": EkfConfig,
               "gps_noise": GpsNoiseModel, "sensor_noise": SensorNoise}
    for name, cls in classes.items():
        if name in data:
            kwargs[name] = from_plain(cls, data[name], name)
    kwargs["spoof"] = build_spoof(data.get("spoof"), mission.home)
    try:
        return Scenario(mission, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("scenario", str(exc)) from None


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(str(path), exc.problem or "parse error", line) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    data = dict(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            child = node.get(p)
            node[p] = dict(child) if isinstance(child, dict) else {}
            node = node[p]
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_scenario(path=None, overrides=()) -> tuple[Scenario, dict]:
    data = load_yaml(path) if path else {}
    data = apply_overrides(data, overrides)
    return build_scenario(data), data


def dump(data) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
