"""GPS/INS extended Kalman filter and the variance-window failsafe.

State vector ``[x, y, vy, r]``: local east/north position plus the lateral
dynamics core.  Odometry speed, compass heading and the steering command are
inputs to the prediction; GPS position and gyro yaw rate are measurements.

The failsafe watches the normalised innovation squared (NIS) of every
measurement channel and alarms when at least two channels stay above the
threshold for a full window.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .control import ControlCommand
from .dynamics import StateMatrices

STATE_DIM = 4
CHANNELS = ("gps_x", "gps_y", "gyro")
GPS_G = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
GYRO_G = np.array([[0.0, 0.0, 0.0, 1.0]])
_SYM_TOL = 1e-9
_TIME_TOL = 1e-9


class CovarianceNotPSD(ArithmeticError):
    pass


class SingularInnovationCovariance(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EkfConfig:
    q: tuple = (1e-4, 1e-4, 1e-4, 1e-4)  # process noise density, diagonal
    r_gyro: float = 1e-4  # (rad/s)^2
    gps_base_accuracy: float = 0.1  # m per unit hdop
    p0: tuple = (1.0, 1.0, 0.1, 0.1)
    threshold: float = 9.0  # NIS, about 3 sigma
    window: float = 1.0  # s
    min_channels: int = 2
    history: int = 512

    def __post_init__(self):
        if len(self.q) != STATE_DIM or len(self.p0) != STATE_DIM:
            raise ValueError(f"q and p0 need {STATE_DIM} entries")
        if min(self.q) < 0 or min(self.p0) < 0 or self.r_gyro < 0:
            raise ValueError("noise terms must be non-negative")
        if not self.window > 0:
            raise ValueError("failsafe window must be positive")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    def r_gps(self, hdop: float) -> np.ndarray:
        sigma = hdop * self.gps_base_accuracy
        return np.eye(2) * (sigma * sigma)


@dataclass
class SensorBundle:
    odometry_vx: float
    compass_psi: float
    gyro_r: float | None = None
    gps_xy: tuple | None = None
    gps_valid: bool = True
    gyro_valid: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.odometry_vx) and math.isfinite(self.compass_psi)):
            raise ValueError("odometry and compass inputs must be finite")
        if self.gps_valid and self.gps_xy is not None and not all(math.isfinite(v) for v in self.gps_xy):
            raise ValueError("valid GPS channel carries a non-finite value")
        if self.gyro_valid and self.gyro_r is not None and not math.isfinite(self.gyro_r):
            raise ValueError("valid gyro channel carries a non-finite value")


@dataclass
class EkfState:
    """Estimate, covariance and the per-channel innovation record.

    ``ekf_predict`` / ``ekf_update`` return new estimate arrays but share the
    channel record with their input; the filter has a single owner.
    """

    x: np.ndarray
    P: np.ndarray
    innovation: dict = field(default_factory=dict)
    nis_history: dict = field(default_factory=dict)
    anomalous_since: dict = field(default_factory=dict)
    threshold: float = 9.0

    @classmethod
    def initial(cls, x0, config: EkfConfig) -> "EkfState":
        return cls(
            np.array(x0, dtype=float),
            np.diag(np.array(config.p0, dtype=float)),
            {c: 0.0 for c in CHANNELS},
            {c: deque(maxlen=config.history) for c in CHANNELS},
            {c: None for c in CHANNELS},
            config.threshold,
        )


def _symmetrize(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    # a NaN anywhere reaches the diagonal within one cycle and fails this test
    if not float(P.diagonal().min()) >= -_SYM_TOL or not math.isfinite(float(P.sum())):
        raise CovarianceNotPSD("covariance lost positive semi-definiteness")
    return P


def transition(psi: float, matrices: StateMatrices | None, dt: float) -> np.ndarray:
    """First-order discretisation ``F = I + J dt`` of the prediction model."""
    if matrices is None:
        a11 = a12 = a21 = a22 = 0.0
    else:
        a11, a12, a21, a22 = matrices.a11, matrices.a12, matrices.a21, matrices.a22
    return np.array([
        [1.0, 0.0, -math.sin(psi) * dt, 0.0],
        [0.0, 1.0, math.cos(psi) * dt, 0.0],
        [0.0, 0.0, 1.0 + a11 * dt, a12 * dt],
        [0.0, 0.0, a21 * dt, 1.0 + a22 * dt],
    ])


def ekf_predict(s: EkfState, u: ControlCommand, matrices: StateMatrices | None, Q: np.ndarray,
                dt: float, sensors: SensorBundle) -> EkfState:
    """Propagate the estimate with the lateral model and dead reckoning.

    ``matrices`` is ``None`` below the speed floor, which freezes the
    lateral states.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    psi, vx = sensors.compass_psi, sensors.odometry_vx
    F = transition(psi, matrices, dt)
    x = F @ s.x
    x[0] += vx * math.cos(psi) * dt
    x[1] += vx * math.sin(psi) * dt
    if matrices is not None:
        x[2] += matrices.b11 * u.delta * dt
        x[3] += matrices.b21 * u.delta * dt
    P = _symmetrize(F @ s.P @ F.T + Q * dt)
    return EkfState(x, P, s.innovation, s.nis_history, s.anomalous_since, s.threshold)


def ekf_update(s: EkfState, z, G: np.ndarray, R: np.ndarray, *,
               channels: tuple | None = None, t: float | None = None) -> tuple[EkfState, np.ndarray]:
    """Kalman measurement update; returns ``(state, innovation)``.

    When ``channels`` names the rows of ``G`` the innovation and its NIS are
    recorded for the failsafe at time ``t``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    G = np.atleast_2d(G)
    R = np.atleast_2d(R)
    if G.shape != (z.size, s.x.size) or R.shape != (z.size, z.size):
        raise ValueError(f"inconsistent shapes z{z.shape} G{G.shape} R{R.shape}")
    innovation = z - G @ s.x
    PGt = s.P @ G.T
    S = G @ PGt + R
    if z.size == 1:
        s11 = float(S[0, 0])
        if not s11 > 0:
            raise SingularInnovationCovariance("innovation variance is not positive")
        pg = PGt[:, 0]
        x = s.x + pg * (float(innovation[0]) / s11)
        # with the optimal gain the Joseph form reduces to P - P g g' P / S,
        # which is symmetric by construction
        P = _symmetrize(s.P - np.outer(pg, pg) / s11)
        if channels is not None:
            record_nis(s, channels[0], float(innovation[0]), float(innovation[0]) ** 2 / s11, t)
        return EkfState(x, P, s.innovation, s.nis_history, s.anomalous_since, s.threshold), innovation
    else:
        scale = np.abs(np.diag(S)).max()
        if not scale > 0 or np.linalg.det(S) <= 1e-14 * scale ** z.size:
            raise SingularInnovationCovariance("innovation covariance is not invertible")
        S_inv = np.linalg.inv(S)
    K = PGt @ S_inv
    x = s.x + K @ innovation
    IKG = np.eye(s.x.size) - K @ G
    # Joseph form: algebraically (I - KG) P, but keeps P positive semi-definite
    P = _symmetrize(IKG @ s.P @ IKG.T + K @ R @ K.T)
    if channels is not None:
        for i, channel in enumerate(channels):
            nis = innovation[i] ** 2 / S[i, i] if S[i, i] > 0 else math.inf
            record_nis(s, channel, float(innovation[i]), float(nis), t)
    return EkfState(x, P, s.innovation, s.nis_history, s.anomalous_since, s.threshold), innovation


def record_nis(s: EkfState, channel: str, innovation: float, nis: float, t: float):
    s.innovation[channel] = innovation
    s.nis_history[channel].append((t, nis))
    if nis > s.threshold:
        if s.anomalous_since[channel] is None:
            s.anomalous_since[channel] = t
    else:
        s.anomalous_since[channel] = None


def failsafe_monitor(s: EkfState, config: EkfConfig, t: float) -> bool:
    """True iff enough channels have stayed anomalous for the whole window."""
    count = 0
    for since in s.anomalous_since.values():
        if since is not None and t - since >= config.window - _TIME_TOL:
            count += 1
    return count >= config.min_channels


class ScalarEkf:
    """Allocation-light twin of ``ekf_predict`` / ``ekf_update`` for the sim loop.

    Specialised to the fixed GPS (x, y) and gyro (r) measurement models and
    the sparse transition.  ``P`` is held as its upper triangle
    ``(p00, p01, p02, p03, p11, p12, p13, p22, p23, p33)``, so it is exactly
    symmetric by construction.  Agreement with the reference functions is
    covered by the test suite.
    """

    __slots__ = ("x", "p", "q", "record")

    def __init__(self, state: EkfState, config: EkfConfig):
        self.x = [float(v) for v in state.x]
        P = state.P
        self.p = tuple(float(P[i, j]) for i in range(4) for j in range(i, 4))
        self.q = tuple(float(v) for v in config.q)
        self.record = state

    @staticmethod
    def _check(p):
        if not (p[0] >= -_SYM_TOL and p[4] >= -_SYM_TOL and p[7] >= -_SYM_TOL and p[9] >= -_SYM_TOL
                and math.isfinite(p[1] + p[2] + p[3] + p[5] + p[6] + p[8])):
            raise CovarianceNotPSD("covariance lost positive semi-definiteness")
        return p

    def predict(self, vx: float, psi: float, delta: float, coefficients, dt: float):
        x0, x1, x2, x3 = self.x
        c, s = math.cos(psi), math.sin(psi)
        f02, f12 = -s * dt, c * dt
        if coefficients is None:
            f22 = f33 = 1.0
            f23 = f32 = 0.0
            bu2 = bu3 = 0.0
        else:
            a11, a12, a21, a22, b11, b21 = coefficients
            f22, f23, f32, f33 = 1.0 + a11 * dt, a12 * dt, a21 * dt, 1.0 + a22 * dt
            bu2, bu3 = b11 * delta * dt, b21 * delta * dt
        self.x = [
            x0 + f02 * x2 + vx * c * dt,
            x1 + f12 * x2 + vx * s * dt,
            f22 * x2 + f23 * x3 + bu2,
            f32 * x2 + f33 * x3 + bu3,
        ]
        p00, p01, p02, p03, p11, p12, p13, p22, p23, p33 = self.p
        # M = F P, row by row
        m00, m01, m02, m03 = p00 + f02 * p02, p01 + f02 * p12, p02 + f02 * p22, p03 + f02 * p23
        m11, m12, m13 = p11 + f12 * p12, p12 + f12 * p22, p13 + f12 * p23
        m22, m23 = f22 * p22 + f23 * p23, f22 * p23 + f23 * p33
        m32, m33 = f32 * p22 + f33 * p23, f32 * p23 + f33 * p33
        # P' = M F' + Q dt, upper triangle only
        q = self.q
        self.p = self._check((
            m00 + f02 * m02 + q[0] * dt,
            m01 + f12 * m02,
            f22 * m02 + f23 * m03,
            f32 * m02 + f33 * m03,
            m11 + f12 * m12 + q[1] * dt,
            f22 * m12 + f23 * m13,
            f32 * m12 + f33 * m13,
            f22 * m22 + f23 * m23 + q[2] * dt,
            f32 * m22 + f33 * m23,
            f32 * m32 + f33 * m33 + q[3] * dt,
        ))

    def update_gyro(self, z: float, r: float, t: float):
        p00, p01, p02, p03, p11, p12, p13, p22, p23, p33 = self.p
        S = p33 + r
        if not S > 0:
            raise SingularInnovationCovariance("innovation variance is not positive")
        x = self.x
        nu = z - x[3]
        k = nu / S
        self.x = [x[0] + p03 * k, x[1] + p13 * k, x[2] + p23 * k, x[3] + p33 * k]
        g0, g1, g2, g3 = p03 / S, p13 / S, p23 / S, p33 / S
        self.p = self._check((
            p00 - g0 * p03, p01 - g0 * p13, p02 - g0 * p23, p03 - g0 * p33,
            p11 - g1 * p13, p12 - g1 * p23, p13 - g1 * p33,
            p22 - g2 * p23, p23 - g2 * p33,
            p33 - g3 * p33,
        ))
        record_nis(self.record, "gyro", nu, nu * nu / S, t)

    def update_gps(self, zx: float, zy: float, r: float, t: float):
        p00, p01, p02, p03, p11, p12, p13, p22, p23, p33 = self.p
        s00, s01, s11 = p00 + r, p01, p11 + r
        det = s00 * s11 - s01 * s01
        if not det > 1e-14 * max(s00, s11) ** 2:
            raise SingularInnovationCovariance("innovation covariance is not invertible")
        i00, i01, i11 = s11 / det, -s01 / det, s00 / det
        x = self.x
        nu0, nu1 = zx - x[0], zy - x[1]
        # K = P[:, :2] S^-1, row i = (p_i0, p_i1) S^-1
        rows = ((p00, p01), (p01, p11), (p02, p12), (p03, p13))
        K = [(a * i00 + b * i01, a * i01 + b * i11) for a, b in rows]
        self.x = [x[i] + K[i][0] * nu0 + K[i][1] * nu1 for i in range(4)]
        (k00, k01), (k10, k11), (k20, k21), (k30, k31) = K
        # P' = P - K P[:2, :]
        self.p = self._check((
            p00 - k00 * p00 - k01 * p01, p01 - k00 * p01 - k01 * p11,
            p02 - k00 * p02 - k01 * p12, p03 - k00 * p03 - k01 * p13,
            p11 - k10 * p01 - k11 * p11, p12 - k10 * p02 - k11 * p12, p13 - k10 * p03 - k11 * p13,
            p22 - k20 * p02 - k21 * p12, p23 - k20 * p03 - k21 * p13,
            p33 - k30 * p03 - k31 * p13,
        ))
        record_nis(self.record, "gps_x", nu0, nu0 * nu0 / s00, t)
        record_nis(self.record, "gps_y", nu1, nu1 * nu1 / s11, t)

    @property
    def P(self) -> np.ndarray:
        p00, p01, p02, p03, p11, p12, p13, p22, p23, p33 = self.p
        return np.array([[p00, p01, p02, p03], [p01, p11, p12, p13], [p02, p12, p22, p23], [p03, p13, p23, p33]])

    def state(self) -> EkfState:
        rec = self.record
        return EkfState(np.array(self.x), self.P, rec.innovation, rec.nis_history,
                        rec.anomalous_since, rec.threshold)
