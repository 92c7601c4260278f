"""Dynamic bicycle model of a small autonomous rover.

The lateral dynamics are the two-state linear model in lateral velocity
``vy`` and yaw rate ``r`` driven by the front steering angle ``delta``.
Pose propagation uses the body-frame velocities rotated by the yaw angle,
and the longitudinal speed follows the commanded acceleration plus the
``r * vy`` coupling term.

Two sign conventions are available for the lateral matrices:

``PAPER_LITERAL``
    The published closed-form entries, with the yaw-damping entry written
    as the sum ``(lf^2 Cf + lr^2 Cr) / (Iz vx)``.  For the 1/10-scale
    testbed parameters this reproduces the printed numeric matrix, including
    its positive (unstable) diagonal.
``STANDARD_STABLE``
    The linearisation of the linear-tire force balance, which is what the
    simulator integrates by default.  Its homogeneous part is stable for any
    positive parameters.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

VX_FLOOR = 0.01
MAX_DT = 0.1
TWO_PI = 2.0 * math.pi


class NearZeroSpeed(ValueError):
    """Longitudinal speed too small for the lateral model (it is singular at 0)."""


class NonFiniteState(ArithmeticError):
    """Integration produced a NaN or infinite state component."""


class SignConvention(enum.Enum):
    PAPER_LITERAL = "paper_literal"
    STANDARD_STABLE = "standard_stable"


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants; defaults are the 1/10-scale testbed values."""

    mass: float = 2.5  # kg
    yaw_inertia: float = 0.0867  # kg m^2
    l_f: float = 0.22  # m, CoM to front axle
    l_r: float = 0.22  # m, CoM to rear axle
    c_yf: float = 1.0  # N/rad
    c_yr: float = 1.0  # N/rad
    length: float = 0.56  # m
    width: float = 0.32  # m
    nominal_speed: float = 1.0  # m/s

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "l_f", "l_r", "length", "width", "nominal_speed"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        # zero stiffness is allowed: it switches the lateral forces off
        for name in ("c_yf", "c_yr"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be non-negative and finite, got {value!r}")
        if self.l_f + self.l_r > self.length:
            raise ValueError("axle distances l_f + l_r exceed the body length")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0  # m, inertial east
    y: float = 0.0  # m, inertial north
    psi: float = 0.0  # rad, counter-clockwise from +x
    vx: float = 0.0  # m/s, body longitudinal
    vy: float = 0.0  # m/s, body lateral
    r: float = 0.0  # rad/s

    @property
    def beta(self) -> float:
        """Side-slip angle of the centre of mass."""
        return math.atan2(self.vy, self.vx)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.psi, self.vx, self.vy, self.r)


@dataclass(frozen=True)
class StateMatrices:
    a11: float
    a12: float
    a21: float
    a22: float
    b11: float
    b21: float
    convention: SignConvention

    @property
    def a(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b11, self.b21])


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(angle, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@functools.lru_cache(maxsize=64)
def _polynomials(params: VehicleParams, convention: SignConvention) -> tuple:
    """Each of a11, a12, a21, a22, b11, b21 as ``(c0, c1, c2)`` in ``c0 + c1/vx + c2/vx**2``."""
    m, iz = params.mass, params.yaw_inertia
    lf, lr, cf, cr = params.l_f, params.l_r, params.c_yf, params.c_yr
    moment = lf * cf - lr * cr
    damping = lf * lf * cf + lr * lr * cr
    if convention is SignConvention.STANDARD_STABLE:
        return (
            (0.0, -(cf + cr) / m, 0.0),
            (0.0, -moment / m, 0.0),
            (0.0, -moment / iz, 0.0),
            (0.0, -damping / iz, 0.0),
            (cf / m, 0.0, 0.0),
            (lf * cf / iz, 0.0, 0.0),
        )
    return (
        (0.0, (cf + cr) / m, 0.0),
        (0.0, 0.0, moment / m),
        (moment / iz, 0.0, 0.0),
        (0.0, damping / iz, 0.0),
        (0.0, -cf / m, 0.0),
        (-lf * cf / iz, 0.0, 0.0),
    )


def _coefficients(params: VehicleParams, vx: float, convention: SignConvention) -> tuple:
    u = 1.0 / vx
    w = u * u
    return tuple(c0 + c1 * u + c2 * w for c0, c1, c2 in _polynomials(params, convention))


def state_matrices(
    params: VehicleParams,
    vx: float,
    convention: SignConvention = SignConvention.STANDARD_STABLE,
) -> StateMatrices:
    """Lateral system and input matrices at longitudinal speed ``vx``."""
    if not vx > VX_FLOOR:
        raise NearZeroSpeed(f"vx={vx!r} m/s is below the {VX_FLOOR} m/s floor")
    return StateMatrices(*_coefficients(params, vx, convention), convention)


def slip_angles(state: VehicleState, delta: float, params: VehicleParams) -> tuple[float, float]:
    """Front and rear tire slip angles under the small-angle assumption."""
    if not state.vx > VX_FLOOR:
        raise NearZeroSpeed(f"vx={state.vx!r} m/s is below the {VX_FLOOR} m/s floor")
    alpha_f = (state.vy + params.l_f * state.r) / state.vx - delta
    alpha_r = (state.vy - params.l_r * state.r) / state.vx
    return alpha_f, alpha_r


def tire_forces(alpha_f: float, alpha_r: float, params: VehicleParams) -> tuple[float, float]:
    """Linear tire model: lateral force opposes slip."""
    return -params.c_yf * alpha_f, -params.c_yr * alpha_r


def force_lateral_derivatives(state: VehicleState, delta: float, params: VehicleParams) -> tuple[float, float]:
    """Lateral accelerations from the tire force balance.

    Uses ``cos(delta) ~ 1`` and per-axle stiffness, and leaves out the
    centripetal ``-r vx`` term, which is exactly the reduction that yields
    the ``STANDARD_STABLE`` matrix form.
    """
    f_yf, f_yr = tire_forces(*slip_angles(state, delta, params), params)
    vy_dot = (f_yf + f_yr) / params.mass
    r_dot = (params.l_f * f_yf - params.l_r * f_yr) / params.yaw_inertia
    return vy_dot, r_dot


def lateral_derivatives(state: VehicleState, delta: float, matrices: StateMatrices) -> tuple[float, float]:
    m = matrices
    vy_dot = m.a11 * state.vy + m.a12 * state.r + m.b11 * delta
    r_dot = m.a21 * state.vy + m.a22 * state.r + m.b21 * delta
    return vy_dot, r_dot


def pose_derivatives(state: VehicleState) -> tuple[float, float, float]:
    """Inertial velocity and yaw rate.

    ``v cos(psi + beta)`` with ``v = hypot(vx, vy)`` and ``beta = atan2(vy, vx)``
    is the body velocity rotated by ``psi``; the rotation form is used because
    it is exact for ``vx = 0`` and cheaper.
    """
    c, s = math.cos(state.psi), math.sin(state.psi)
    return state.vx * c - state.vy * s, state.vx * s + state.vy * c, state.r


def _derivative(s, delta, ax, params, convention):
    x, y, psi, vx, vy, r = s
    if vx > VX_FLOOR:
        a11, a12, a21, a22, b11, b21 = _coefficients(params, vx, convention)
        vy_dot = a11 * vy + a12 * r + b11 * delta
        r_dot = a21 * vy + a22 * r + b21 * delta
    else:
        vy_dot = r_dot = 0.0
    c, sn = math.cos(psi), math.sin(psi)
    return (vx * c - vy * sn, vx * sn + vy * c, r, ax + r * vy, vy_dot, r_dot)


def integrate(s: tuple, delta: float, ax: float, params: VehicleParams, dt: float,
              convention: SignConvention = SignConvention.STANDARD_STABLE) -> tuple:
    """One RK4 step on a raw ``(x, y, psi, vx, vy, r)`` tuple.

    The simulation loop calls this directly to avoid dataclass churn; the
    stages are inlined and agree with :func:`_derivative` to rounding.
    """
    poly = _polynomials(params, convention)
    (a0, a1, a2), (b0, b1, b2), (c0, c1, c2), (d0, d1, d2), (e0, e1, e2), (g0, g1, g2) = poly
    cos, sin = math.cos, math.sin

    def f(psi, vx, vy, r):
        if vx > VX_FLOOR:
            u = 1.0 / vx
            w = u * u
            vy_dot = (a0 + a1 * u + a2 * w) * vy + (b0 + b1 * u + b2 * w) * r + (e0 + e1 * u + e2 * w) * delta
            r_dot = (c0 + c1 * u + c2 * w) * vy + (d0 + d1 * u + d2 * w) * r + (g0 + g1 * u + g2 * w) * delta
        else:
            vy_dot = r_dot = 0.0
        c, sn = cos(psi), sin(psi)
        return vx * c - vy * sn, vx * sn + vy * c, r, ax + r * vy, vy_dot, r_dot

    x, y, psi, vx, vy, r = s
    h = 0.5 * dt
    k1 = f(psi, vx, vy, r)
    k2 = f(psi + h * k1[2], vx + h * k1[3], vy + h * k1[4], r + h * k1[5])
    k3 = f(psi + h * k2[2], vx + h * k2[3], vy + h * k2[4], r + h * k2[5])
    k4 = f(psi + dt * k3[2], vx + dt * k3[3], vy + dt * k3[4], r + dt * k3[5])
    w = dt / 6.0
    x, y, psi, vx, vy, r = (
        a + w * (q1 + 2.0 * q2 + 2.0 * q3 + q4) for a, q1, q2, q3, q4 in zip(s, k1, k2, k3, k4)
    )
    # the rover does not reverse; braking stops it
    if vx < 0.0:
        vx = 0.0
    out = (x, y, wrap_angle(psi), vx, vy, r)
    if not all(math.isfinite(v) for v in out):
        raise NonFiniteState(f"non-finite state after integration: {out}")
    return out


def step(
    state: VehicleState,
    delta: float,
    ax: float,
    params: VehicleParams,
    dt: float,
    convention: SignConvention = SignConvention.STANDARD_STABLE,
) -> VehicleState:
    """Advance the vehicle by ``dt`` seconds with fixed-step RK4."""
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt!r}")
    if state.vx < 0.0:
        raise ValueError("vx must be non-negative")
    return VehicleState(*integrate(state.as_tuple(), delta, ax, params, dt, convention))

