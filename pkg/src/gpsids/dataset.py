"""Labelled feature datasets: CSV schema and the two generation profiles.

``field`` mirrors single-rover field trials logged at 1 Hz with straight,
turning and stationary missions.  ``urban`` mirrors a many-vehicle town
simulation logged every 0.1 s in which every original row is paired with a
spoofed copy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rng_streams
from .attack import FixedTarget, SpoofConfig, bearing_offset_target, sample_capture_delay
from .navigation import GeoPoint, Mission, circular_mission, normalize_lon, offset, straight_mission
from .simulation import COLUMNS, FEATURES, FeatureRow, Scenario, SimLog, run

UNITS_COMMENT = ("# units: timestamp s; lat, lon decimal degrees; hdop, vdop dimensionless; "
                 "e, x, y m; delta, psi rad; vx, vy m/s; r rad/s; label 1 = attack")
INT_COLUMNS = frozenset({"sat_lock", "sat_count", "label"})
SITE = GeoPoint(32.2319, -110.9501)
PROFILES = ("field", "urban")


class SchemaMismatch(ValueError):
    def __init__(self, column: str, message: str):
        super().__init__(f"column {column!r}: {message}")
        self.column = column


def to_dataset(logs) -> list:
    """Concatenate the rows of several logs, in order."""
    rows = []
    for log in logs:
        rows.extend(log.rows if isinstance(log, SimLog) else log)
    return rows


def _format(value) -> str:
    # repr gives the shortest string that parses back to the same float
    return repr(float(value)) if isinstance(value, float) else str(int(value))


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(UNITS_COMMENT + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_format(getattr(row, c)) for c in COLUMNS])
    return path


def _parse(column: str, text: str):
    try:
        return int(text) if column in INT_COLUMNS else float(text)
    except ValueError:
        raise SchemaMismatch(column, f"cannot parse {text!r}") from None


def read_csv(path) -> list:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(io.StringIO("".join(lines)))
    header = next(reader, None)
    if header is None:
        raise SchemaMismatch(COLUMNS[0], f"{path} has no header")
    for name in header:
        if name not in COLUMNS:
            raise SchemaMismatch(name, f"unknown column in {path}")
    for name in COLUMNS:
        if name not in header:
            raise SchemaMismatch(name, f"missing from {path}")
    if len(header) != len(set(header)):
        dup = next(n for n in header if header.count(n) > 1)
        raise SchemaMismatch(dup, f"duplicated in {path}")
    rows = []
    for values in reader:
        if len(values) != len(header):
            raise SchemaMismatch(header[min(len(values), len(header) - 1)],
                                 f"line {reader.line_num} of {path} has {len(values)} fields")
        record = {name: _parse(name, v) for name, v in zip(header, values)}
        rows.append(FeatureRow(**record))
    return rows


def feature_matrix(rows) -> tuple[np.ndarray, np.ndarray]:
    """``(X, y)`` with the 14 features in schema order."""
    if not rows:
        return np.zeros((0, len(FEATURES))), np.zeros(0, dtype=int)
    X = np.array([row.features() for row in rows], dtype=float)
    y = np.array([row.label for row in rows], dtype=int)
    return X, y


def balance(rows) -> dict:
    n = len(rows)
    attack = sum(row.label for row in rows)
    return {"rows": n, "normal": n - attack, "attack": attack,
            "attack_fraction": attack / n if n else 0.0}


# --- field profile ---------------------------------------------------------

MISSION_KINDS = ("straight", "turning", "stationary")


@dataclass(frozen=True)
class FieldProfile:
    attack_start: float = 10.0  # s of autonomous driving before the attack
    attack_duration: float = 300.0  # s
    attack_fraction: float = 0.25
    spoof_distance: tuple = (500.0, 1500.0)  # m
    circle_radius: tuple = (4.0, 6.0)  # m
    line_length: tuple = (15.0, 30.0)  # m
    home_spread: float = 200.0  # m around the site
    feature_rate: float = 1.0  # Hz


def _mission(kind: str, home: GeoPoint, rng: np.random.Generator, profile: FieldProfile) -> Mission:
    bearing = float(rng.uniform(0.0, 2.0 * math.pi))
    if kind == "straight":
        return straight_mission(home, float(rng.uniform(*profile.line_length)), bearing)
    if kind == "turning":
        return circular_mission(home, float(rng.uniform(*profile.circle_radius)), 7,
                                start_bearing=bearing, clockwise=bool(rng.integers(2)), loop=True)
    return Mission(home, (home,), loop=True)


def field_scenarios(count: int, seed: int, profile: FieldProfile = FieldProfile()) -> list:
    """A batch sized so attack rows make up about ``attack_fraction`` of all rows.

    A quarter of the scenarios (at least one) carry an attack and run for
    ``attack_start + attack_duration``; the clean runs share the remaining
    normal-row budget equally.
    """
    if count <= 0:
        return []
    n_attack = max(1, round(count * profile.attack_fraction)) if count > 1 else 0
    n_normal = count - n_attack
    attack_rows = profile.attack_duration * n_attack
    lead_rows = profile.attack_start * n_attack
    f = profile.attack_fraction
    normal_duration = 300.0
    if n_normal:
        normal_duration = max(30.0, (attack_rows * (1.0 - f) / f - lead_rows) / n_normal)
    scenarios = []
    for i in range(count):
        rng = rng_streams.stream(seed, rng_streams.SCENARIO, i)
        kind = MISSION_KINDS[i % len(MISSION_KINDS)]
        home = offset(SITE, *(float(v) for v in rng.uniform(-profile.home_spread, profile.home_spread, 2)))
        mission = _mission(kind, home, rng, profile)
        v_target = 0.0 if kind == "stationary" else float(rng.uniform(0.2, 0.35))
        is_attack = i >= n_normal
        spoof = None
        duration = normal_duration
        if is_attack:
            target = bearing_offset_target(home, float(rng.uniform(*profile.spoof_distance)),
                                           float(rng.uniform(0.0, 2.0 * math.pi)))
            spoof = SpoofConfig(FixedTarget(target), profile.attack_start, profile.attack_duration,
                                capture_delay=sample_capture_delay(rng))
            duration = profile.attack_start + profile.attack_duration
        scenarios.append(Scenario(
            mission, spoof=spoof, seed=int(rng.integers(2**63)), feature_rate=profile.feature_rate,
            duration=duration, v_target=v_target,
        ))
    return scenarios


# --- urban profile ---------------------------------------------------------

@dataclass(frozen=True)
class UrbanProfile:
    duration: float = 60.0  # s per vehicle
    feature_rate: float = 10.0  # Hz
    home_spread: float = 1000.0  # m
    line_length: tuple = (20.0, 60.0)  # m


def urban_scenarios(count: int, seed: int, profile: UrbanProfile = UrbanProfile()) -> list:
    scenarios = []
    for i in range(count):
        rng = rng_streams.stream(seed, rng_streams.SCENARIO, i)
        home = offset(SITE, *(float(v) for v in rng.uniform(-profile.home_spread, profile.home_spread, 2)))
        bearing = float(rng.uniform(0.0, 2.0 * math.pi))
        if i % 2:
            mission = circular_mission(home, float(rng.uniform(5.0, 10.0)), 7, start_bearing=bearing, loop=True)
        else:
            mission = straight_mission(home, float(rng.uniform(*profile.line_length)), bearing)
        scenarios.append(Scenario(mission, seed=int(rng.integers(2**63)), feature_rate=profile.feature_rate,
                                  duration=profile.duration, v_target=float(rng.uniform(0.25, 0.5))))
    return scenarios


def pair_spoofed(rows, seed: int, vehicle: int) -> list:
    """Interleave every row with a spoofed copy drawn as ``N(X + mu, sigma^2)`` per axis.

    ``mu`` and ``sigma`` are the mean and standard deviation of the vehicle's
    own lat/lon readings, so the copy lands far from the true track.
    Longitude is wrapped back into [-180, 180).
    """
    if not rows:
        return []
    rng = rng_streams.stream(seed, rng_streams.ATTACK, vehicle)
    lat = np.array([r.lat for r in rows])
    lon = np.array([r.lon for r in rows])
    mu = (float(lat.mean()), float(lon.mean()))
    sigma = (float(lat.std()), float(lon.std()))
    z = rng.standard_normal((len(rows), 2))
    out = []
    for row, (z_lat, z_lon) in zip(rows, z):
        out.append(row)
        out.append(replace(row, lat=row.lat + mu[0] + sigma[0] * z_lat,
                           lon=normalize_lon(row.lon + mu[1] + sigma[1] * z_lon), label=1))
    return out


def generate(profile: str, count: int, seed: int, *, field_profile: FieldProfile = FieldProfile(),
             urban_profile: UrbanProfile = UrbanProfile(), mapper=map) -> list:
    """Run a whole profile batch and return the merged rows.

    ``mapper`` may be a pool's ``map`` to fan scenarios out; each run is pure,
    so the result does not depend on the schedule.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if count <= 0:
        return []
    if profile == "field":
        return to_dataset(mapper(run, field_scenarios(count, seed, field_profile)))
    logs = list(mapper(run, urban_scenarios(count, seed, urban_profile)))
    rows = []
    for i, log in enumerate(logs):
        rows.extend(pair_spoofed(log.rows, seed, i))
    return rows
