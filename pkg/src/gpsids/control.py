"""PID cascade for steering and a PID speed loop.

The steering cascade has an outer loop that turns cross-track error into a
heading correction and an inner loop that turns the corrected heading error
into a front-wheel angle.  The acceleration and steering gains that scale
the final actuator command are unit pass-throughs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("PID gains must be finite")
        if self.kp < 0:
            raise ValueError("kp must be non-negative")


class PidState(NamedTuple):
    """Integrator memory; a named tuple because one is built every tick."""

    integral: float = 0.0
    prev_error: float | None = None
    windup_limit: float = math.inf  # clamp on |integral|, must be >= 0


def pid_step(gains: PidGains, state: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One discrete PID update; returns ``(u, new_state)``.

    The derivative is a backward difference on the error and is zero on the
    first call.  The integral is clamped to the windup limit.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    lim = state.windup_limit
    if not lim >= 0:
        raise ValueError("windup limit must be non-negative")
    integral = min(lim, max(-lim, state.integral + error * dt))
    derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    u = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return u, PidState(integral, error, lim)


def clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


@dataclass(frozen=True)
class ControllerConfig:
    outer: PidGains = PidGains(2.0)
    inner: PidGains = PidGains(3.0, 0.0, 0.1)  # no integral: it winds up in saturated turns
    speed: PidGains = PidGains(1.5, 0.02, 0.1)
    max_steer: float = 0.7  # rad
    accel_min: float = -2.0  # m/s^2
    accel_max: float = 1.0  # m/s^2
    k_acc: float = 1.0
    k_str: float = 1.0
    min_lookahead: float = 1.0  # m

    def __post_init__(self):
        if not self.max_steer > 0:
            raise ValueError("max_steer must be positive")
        if not self.accel_min <= 0 <= self.accel_max:
            raise ValueError("acceleration bounds must bracket zero")


@dataclass(frozen=True)
class ControlCommand:
    delta: float  # rad
    ax: float  # m/s^2


@dataclass
class ControllerState:
    """Mutable per-vehicle controller memory (one owner)."""

    outer: PidState = field(default_factory=PidState)
    inner: PidState = field(default_factory=PidState)
    speed: PidState = field(default_factory=PidState)

    @classmethod
    def fresh(cls, config: ControllerConfig) -> "ControllerState":
        def limit(g: PidGains, bound: float) -> float:
            return bound / g.ki if g.ki > 0 else math.inf

        return cls(
            PidState(windup_limit=limit(config.outer, math.pi / 2)),
            PidState(windup_limit=limit(config.inner, config.max_steer)),
            PidState(windup_limit=limit(config.speed, max(config.accel_max, -config.accel_min))),
        )


def steering_controller(e: float, heading_error: float, config: ControllerConfig,
                        state: ControllerState, dt: float, distance: float = 1.0) -> float:
    """Cascade steering command (rad), clamped to ``+-max_steer``.

    ``e`` and ``heading_error`` follow the math convention: positive means
    the target is to the left, which calls for positive (left) steering.
    The outer output is an offset in metres; dividing by the remaining
    ``distance`` (floored at ``min_lookahead``) turns it into an angle, so the
    loop gain does not grow with distance to the waypoint.
    """
    u_outer, state.outer = pid_step(config.outer, state.outer, e, dt)
    correction = math.atan(u_outer / max(distance, config.min_lookahead))
    u, state.inner = pid_step(config.inner, state.inner, heading_error + correction, dt)
    return clamp(config.k_str * u, -config.max_steer, config.max_steer)


def speed_controller(v_target: float, vx: float, config: ControllerConfig,
                     state: ControllerState, dt: float) -> float:
    u, state.speed = pid_step(config.speed, state.speed, v_target - vx, dt)
    return clamp(config.k_acc * u, config.accel_min, config.accel_max)
