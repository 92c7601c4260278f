"""Position-level GPS spoofing.

An attack runs through four phases.  While *jamming* the receiver keeps
reporting the true position but loses satellite locks and its DOP inflates;
once *captured* the reported position follows the attacker's choice, blurred
by Gaussian masking noise.  Carrier and code-level effects are folded into
this timing and noise description.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import wrap_angle
from .navigation import METERS_PER_DEG, GeoPoint, GpsFix, normalize_lon, offset, target_yaw_from_gps

CAPTURE_DELAY_RANGE = (4.0, 7.0)  # s


class Phase(enum.IntEnum):
    IDLE = 0
    JAMMING = 1
    CAPTURED = 2
    ENDED = 3


@dataclass(frozen=True)
class FixedTarget:
    target: GeoPoint


@dataclass(frozen=True)
class BiasAngle:
    theta: float  # rad, added to the target bearing


@dataclass(frozen=True)
class GaussianOffset:
    mu: tuple = (0.0, 0.0)  # deg (lat, lon)
    sigma: tuple = (0.0, 0.0)  # deg


@dataclass(frozen=True)
class SpoofConfig:
    mode: object
    start: float  # s
    duration: float  # s
    capture_delay: float = 5.0  # s
    masking_sigma: float = 5e-6  # deg
    hdop_inflation: float = 3.0

    def __post_init__(self):
        if not isinstance(self.mode, (FixedTarget, BiasAngle, GaussianOffset)):
            raise TypeError(f"unknown spoofing mode {self.mode!r}")
        if not self.duration > 0:
            raise ValueError("attack duration must be positive")
        if self.capture_delay < 0 or self.masking_sigma < 0:
            raise ValueError("capture delay and masking noise must be non-negative")
        if self.hdop_inflation < 1:
            raise ValueError("hdop inflation factor must be >= 1")

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def bias(self) -> float:
        return self.mode.theta if isinstance(self.mode, BiasAngle) else 0.0


def sample_capture_delay(rng: np.random.Generator) -> float:
    return float(rng.uniform(*CAPTURE_DELAY_RANGE))


@dataclass(frozen=True)
class SpoofState:
    phase: Phase
    elapsed: float  # s since attack start, 0 while idle

    @property
    def active(self) -> bool:
        """The attack flag: true while jamming or captured."""
        return self.phase in (Phase.JAMMING, Phase.CAPTURED)


def spoof_phase(config: SpoofConfig, t: float) -> SpoofState:
    if t < config.start:
        return SpoofState(Phase.IDLE, 0.0)
    elapsed = t - config.start
    if t >= config.end:
        return SpoofState(Phase.ENDED, elapsed)
    if elapsed < config.capture_delay:
        return SpoofState(Phase.JAMMING, elapsed)
    return SpoofState(Phase.CAPTURED, elapsed)


def spoof_fix(true_fix: GpsFix, config: SpoofConfig, state: SpoofState, rng: np.random.Generator) -> GpsFix:
    """What the receiver reports for ``true_fix`` in the given attack state.

    Outside the attack window the fix is returned untouched and no variates
    are consumed.
    """
    if state.phase is Phase.JAMMING:
        progress = state.elapsed / config.capture_delay if config.capture_delay > 0 else 1.0
        # locks decay linearly to zero, DOP ramps up to the inflation factor
        lock = int(round(true_fix.sat_lock * (1.0 - progress)))
        hdop = true_fix.hdop * (1.0 + (config.hdop_inflation - 1.0) * progress)
        vdop = true_fix.vdop * (1.0 + (config.hdop_inflation - 1.0) * progress)
        return replace(true_fix, sat_lock=lock, hdop=hdop, vdop=vdop)
    if state.phase is not Phase.CAPTURED:
        return true_fix
    z = rng.standard_normal(4)
    mode = config.mode
    lat, lon = true_fix.position.lat, true_fix.position.lon
    if isinstance(mode, FixedTarget):
        lat, lon = mode.target.lat, mode.target.lon
    elif isinstance(mode, GaussianOffset):
        lat = lat + mode.mu[0] + mode.sigma[0] * z[0]
        lon = lon + mode.mu[1] + mode.sigma[1] * z[1]
    if config.masking_sigma > 0:
        lat += config.masking_sigma * z[2]
        lon += config.masking_sigma * z[3]
    lat = min(90.0, max(-90.0, lat))
    return replace(true_fix, position=GeoPoint(lat, normalize_lon(lon)))


def spoofed_target_yaw(current_spoofed: GeoPoint, target: GeoPoint, theta: float) -> float:
    """Bearing computed from the spoofed position, rotated by the bias angle."""
    return wrap_angle(target_yaw_from_gps(current_spoofed, target) + theta)


def masking_sigma_for(meters: float) -> float:
    """Convert a masking-noise level in metres to degrees of latitude."""
    return meters / METERS_PER_DEG


def bearing_offset_target(origin: GeoPoint, distance: float, bearing: float) -> GeoPoint:
    """Spoofed location ``distance`` metres from ``origin`` along a compass bearing."""
    return offset(origin, distance * math.sin(bearing), distance * math.cos(bearing))
