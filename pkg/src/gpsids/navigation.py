"""GPS fixes, spherical geodesy and waypoint missions.

Bearings returned by :func:`target_yaw_from_gps` are compass bearings
(0 = north, clockwise positive).  The vehicle model uses the planar math
convention (0 = east, counter-clockwise positive); convert with
:func:`compass_to_math` / :func:`math_to_compass`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import wrap_angle

EARTH_RADIUS = 6_371_000.0  # m
METERS_PER_DEG = EARTH_RADIUS * math.pi / 180.0
FRAME_HALF_WIDTH = 0.5  # deg
_SAME_POINT_TOL = 1e-12  # deg


class DegeneratePair(ValueError):
    """Bearing requested between two coincident points."""


class OutOfFrame(ValueError):
    """Point too far from the local frame origin for the flat-earth projection."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float  # deg
    lon: float  # deg

    def __post_init__(self):
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat!r} outside [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 < self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon!r} outside (-180, 180]")


@dataclass(frozen=True)
class GpsFix:
    position: GeoPoint
    hdop: float
    vdop: float
    sat_lock: int
    sat_count: int
    timestamp: float

    def __post_init__(self):
        if not (math.isfinite(self.hdop) and self.hdop >= 0 and math.isfinite(self.vdop) and self.vdop >= 0):
            raise ValueError("dop values must be finite and non-negative")
        if not 0 <= self.sat_lock <= self.sat_count:
            raise ValueError(f"need 0 <= sat_lock <= sat_count, got {self.sat_lock}/{self.sat_count}")


def normalize_lon(lon: float) -> float:
    """Map a longitude into (-180, 180]."""
    w = math.remainder(lon, 360.0)
    return 180.0 if w == -180.0 else w


def compass_to_math(bearing: float) -> float:
    return wrap_angle(math.pi / 2 - bearing)


def math_to_compass(psi: float) -> float:
    return wrap_angle(math.pi / 2 - psi)


def target_yaw_from_gps(current: GeoPoint, target: GeoPoint) -> float:
    """Initial great-circle bearing from ``current`` to ``target`` (rad, compass)."""
    if abs(current.lat - target.lat) <= _SAME_POINT_TOL and abs(normalize_lon(target.lon - current.lon)) <= _SAME_POINT_TOL:
        raise DegeneratePair(f"bearing undefined between coincident points {current}")
    lat_c = math.radians(current.lat)
    lat_t = math.radians(target.lat)
    dlon = math.radians(target.lon - current.lon)
    p = math.sin(dlon) * math.cos(lat_t)
    q = math.cos(lat_c) * math.sin(lat_t) - math.sin(lat_c) * math.cos(lat_t) * math.cos(dlon)
    return wrap_angle(math.atan2(p, q))


def cross_track_error(psi_t: float, psi: float, distance_to_target: float) -> float:
    """Remaining distance times the sine of the heading error (m).

    Both angles must share one convention.  In the math convention a
    positive value means the target lies to the left of the heading.
    """
    if distance_to_target < 0:
        raise ValueError("distance_to_target must be non-negative")
    return distance_to_target * math.sin(wrap_angle(psi_t - psi))


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in metres."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular east/north projection about ``origin``."""

    origin: GeoPoint
    m_per_deg_lat: float = field(init=False)
    m_per_deg_lon: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m_per_deg_lat", METERS_PER_DEG)
        object.__setattr__(self, "m_per_deg_lon", METERS_PER_DEG * math.cos(math.radians(self.origin.lat)))
        if not self.m_per_deg_lon > 0:
            raise ValueError("local frame origin too close to a pole")


def geo_to_local(p: GeoPoint, frame: LocalFrame) -> tuple[float, float]:
    """Project to ``(x east, y north)`` metres."""
    dlat = p.lat - frame.origin.lat
    dlon = normalize_lon(p.lon - frame.origin.lon)
    if abs(dlat) >= FRAME_HALF_WIDTH or abs(dlon) >= FRAME_HALF_WIDTH:
        raise OutOfFrame(f"{p} is more than {FRAME_HALF_WIDTH} deg from {frame.origin}")
    return dlon * frame.m_per_deg_lon, dlat * frame.m_per_deg_lat


def local_to_geo(x: float, y: float, frame: LocalFrame) -> GeoPoint:
    dlat = y / frame.m_per_deg_lat
    dlon = x / frame.m_per_deg_lon
    if abs(dlat) >= FRAME_HALF_WIDTH or abs(dlon) >= FRAME_HALF_WIDTH:
        raise OutOfFrame(f"({x:.1f}, {y:.1f}) m is outside the {FRAME_HALF_WIDTH} deg frame")
    return GeoPoint(frame.origin.lat + dlat, normalize_lon(frame.origin.lon + dlon))


def offset(p: GeoPoint, east: float, north: float) -> GeoPoint:
    """Move ``p`` by a small east/north displacement in metres."""
    return local_to_geo(east, north, LocalFrame(p))


@dataclass(frozen=True)
class Mission:
    home: GeoPoint
    waypoints: tuple
    acceptance_radius: float = 2.0  # m
    loop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if not self.waypoints:
            raise ValueError("a mission needs at least one waypoint")
        if not self.acceptance_radius > 0:
            raise ValueError("acceptance radius must be positive")


def circular_mission(home: GeoPoint, radius: float, n_waypoints: int = 7, *,
                     start_bearing: float = 0.0, clockwise: bool = False,
                     acceptance_radius: float = 2.0, loop: bool = False) -> Mission:
    """Regular polygon through ``home``; the last waypoint is ``home`` itself.

    ``start_bearing`` (compass, rad) is the direction from home to the circle
    centre.
    """
    cx = radius * math.sin(start_bearing)
    cy = radius * math.cos(start_bearing)
    phase0 = math.atan2(-cy, -cx)  # home, seen from the centre (math angle)
    sign = -1.0 if clockwise else 1.0
    frame = LocalFrame(home)
    waypoints = []
    for k in range(1, n_waypoints):
        phi = phase0 + sign * 2.0 * math.pi * k / n_waypoints
        waypoints.append(local_to_geo(cx + radius * math.cos(phi), cy + radius * math.sin(phi), frame))
    waypoints.append(home)
    return Mission(home, tuple(waypoints), acceptance_radius, loop)


def straight_mission(home: GeoPoint, length: float, bearing: float, *,
                     acceptance_radius: float = 2.0, loop: bool = True) -> Mission:
    """Out-and-back along one compass bearing."""
    far = offset(home, length * math.sin(bearing), length * math.cos(bearing))
    return Mission(home, (far, home), acceptance_radius, loop)


def mission_step(mission: Mission, current: GeoPoint, active_index: int) -> tuple[GeoPoint, int, bool]:
    """Advance the active waypoint once ``current`` is inside the acceptance radius.

    Returns ``(target, new_index, complete)``.  When the final waypoint is
    reached ``complete`` is true; a looping mission restarts at index 0,
    otherwise ``new_index`` points one past the end and the caller stops.
    """
    n = len(mission.waypoints)
    if not 0 <= active_index < n:
        raise IndexError(f"active index {active_index} outside mission of {n} waypoints")
    target = mission.waypoints[active_index]
    if great_circle_distance(current, target) > mission.acceptance_radius:
        return target, active_index, False
    new_index = active_index + 1
    if new_index < n:
        return mission.waypoints[new_index], new_index, False
    if mission.loop:
        return mission.waypoints[0], 0, True
    return target, n, True


@dataclass(frozen=True)
class GpsNoiseModel:
    """Receiver noise stand-in: DOP drives position scatter.

    Position jitter per axis has standard deviation ``hdop * base_accuracy``.
    """

    base_accuracy: float = 0.1  # m per unit hdop
    hdop_median: float = 0.9
    hdop_sigma: float = 0.15  # log-space
    vdop_median: float = 1.4
    vdop_sigma: float = 0.15
    dop_floor: float = 0.5
    sat_min: int = 8
    sat_max: int = 14
    lock_dropout: float = 0.05

    def __post_init__(self):
        if self.base_accuracy < 0 or self.hdop_sigma < 0 or self.vdop_sigma < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0 <= self.sat_min <= self.sat_max:
            raise ValueError("need 0 <= sat_min <= sat_max")
        if not 0.0 <= self.lock_dropout <= 1.0:
            raise ValueError("lock_dropout must be a probability")

    @classmethod
    def zero(cls, dop: float = 0.5, satellites: int = 12) -> "GpsNoiseModel":
        return cls(base_accuracy=0.0, hdop_median=dop, hdop_sigma=0.0, vdop_median=dop, vdop_sigma=0.0,
                   dop_floor=dop, sat_min=satellites, sat_max=satellites, lock_dropout=0.0)


def synthesize_fix(true_position: GeoPoint, noise: GpsNoiseModel, t: float, rng: np.random.Generator) -> GpsFix:
    """Draw one receiver fix around the true position.

    Consumes a fixed number of variates per call so streams stay aligned.
    """
    z = rng.standard_normal(4)
    hdop = max(noise.dop_floor, noise.hdop_median * math.exp(noise.hdop_sigma * z[0]))
    vdop = max(noise.dop_floor, noise.vdop_median * math.exp(noise.vdop_sigma * z[1]))
    sat_count = int(rng.integers(noise.sat_min, noise.sat_max + 1))
    sat_lock = sat_count - int(rng.binomial(sat_count, noise.lock_dropout))
    sigma = hdop * noise.base_accuracy
    if sigma > 0:
        m_lon = METERS_PER_DEG * math.cos(math.radians(true_position.lat))
        position = GeoPoint(true_position.lat + sigma * z[2] / METERS_PER_DEG,
                            normalize_lon(true_position.lon + sigma * z[3] / m_lon))
    else:
        position = true_position
    return GpsFix(position, hdop, vdop, sat_lock, sat_count, t)
