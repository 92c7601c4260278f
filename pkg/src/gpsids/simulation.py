"""Closed-loop rover simulation with optional GPS spoofing.

Each control tick advances the vehicle; at the GPS rate a fix is drawn,
passed through the spoofer and used for waypoint bearing and distance; the
EKF predicts every tick, fuses gyro every tick and GPS at the GPS rate; at
the feature rate one labelled :class:`FeatureRow` is appended to the log.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import rng as rng_streams
from .attack import Phase, SpoofConfig, spoof_fix, spoof_phase, spoofed_target_yaw
from .control import ControllerConfig, ControllerState, speed_controller, steering_controller
from .dynamics import (
    VX_FLOOR,
    NonFiniteState,
    SignConvention,
    VehicleParams,
    _coefficients,
    integrate,
    wrap_angle,
)
from .estimation import (
    CovarianceNotPSD,
    EkfConfig,
    EkfState,
    ScalarEkf,
    SingularInnovationCovariance,
    failsafe_monitor,
)
from .navigation import (
    DegeneratePair,
    GeoPoint,
    GpsNoiseModel,
    LocalFrame,
    Mission,
    OutOfFrame,
    compass_to_math,
    cross_track_error,
    geo_to_local,
    great_circle_distance,
    local_to_geo,
    mission_step,
    synthesize_fix,
    target_yaw_from_gps,
)

ARRIVAL_RADIUS = 0.25  # m, estimated distance that counts as parked at home
ARRIVAL_HYSTERESIS = 0.3  # m of estimated range growth that marks the closest approach

FEATURES = ("lat", "lon", "hdop", "vdop", "sat_lock", "sat_count", "e", "delta",
            "x", "y", "psi", "vx", "vy", "r")


class DivergedSimulation(RuntimeError):
    def __init__(self, tick: int, message: str):
        super().__init__(f"simulation diverged at tick {tick}: {message}")
        self.tick = tick


@dataclass(frozen=True)
class SensorNoise:
    compass: float = 0.002  # rad
    gyro: float = 0.005  # rad/s
    odometry: float = 0.01  # m/s

    @classmethod
    def zero(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    mission: Mission
    vehicle: VehicleParams = VehicleParams()
    controller: ControllerConfig = ControllerConfig()
    ekf: EkfConfig = EkfConfig()
    gps_noise: GpsNoiseModel = GpsNoiseModel()
    sensor_noise: SensorNoise = SensorNoise()
    spoof: SpoofConfig | None = None
    seed: int = 0
    dt_control: float = 0.01  # s
    gps_rate: float = 1.0  # Hz
    feature_rate: float = 1.0  # Hz
    duration: float = 120.0  # s
    v_target: float | None = 0.25  # m/s cruise, None = vehicle nominal speed
    initial_heading: float | None = None  # rad (math), None = towards first waypoint
    frame_origin: GeoPoint | None = None  # None = mission home
    convention: SignConvention = SignConvention.STANDARD_STABLE

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 0 < self.dt_control <= 0.1:
            raise ValueError("dt_control must lie in (0, 0.1]")
        for name in ("gps_rate", "feature_rate"):
            rate = getattr(self, name)
            if not rate > 0:
                raise ValueError(f"{name} must be positive")
            ticks = 1.0 / (rate * self.dt_control)
            if abs(ticks - round(ticks)) > 1e-9 or round(ticks) < 1:
                raise ValueError(f"{name}={rate} Hz does not divide the control rate")

    @property
    def speed(self) -> float:
        return self.vehicle.nominal_speed if self.v_target is None else self.v_target

    @property
    def frame(self) -> LocalFrame:
        return LocalFrame(self.frame_origin or self.mission.home)


@dataclass(frozen=True)
class FeatureRow:
    timestamp: float
    lat: float
    lon: float
    hdop: float
    vdop: float
    sat_lock: int
    sat_count: int
    e: float
    delta: float
    x: float
    y: float
    psi: float
    vx: float
    vy: float
    r: float
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def features(self) -> tuple:
        return tuple(getattr(self, name) for name in FEATURES)


COLUMNS = tuple(f.name for f in fields(FeatureRow))


@dataclass
class SimLog:
    """Everything one run produced, on the feature-rate time base."""

    rows: list = field(default_factory=list)
    truth: list = field(default_factory=list)  # (t, x, y, psi, vx, vy, r)
    estimate: list = field(default_factory=list)  # (t, x, y, vy, r)
    commands: list = field(default_factory=list)  # (t, delta, ax)
    phases: list = field(default_factory=list)  # (t, Phase)
    alarm_times: list = field(default_factory=list)  # failsafe alarms, every tick
    completed: bool = False
    attack_window: tuple | None = None
    abs_e_sum: float = 0.0  # sum of |e| over every control tick
    ticks: int = 0
    final_state: tuple | None = None  # (t, x, y, psi, vx, vy, r) when the run stopped

    @property
    def mean_abs_e(self) -> float:
        """Time-averaged ``|e|`` at the control rate."""
        return self.abs_e_sum / self.ticks if self.ticks else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([row.timestamp for row in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    def labels(self) -> np.ndarray:
        return np.array([row.label for row in self.rows], dtype=int)

    def first_alarm(self, after: float = 0.0) -> float | None:
        for t in self.alarm_times:
            if t >= after - 1e-9:
                return t
        return None


def _ticks(rate: float, dt: float) -> int:
    return int(round(1.0 / (rate * dt)))


def run(scenario: Scenario) -> SimLog:
    """Simulate one scenario; a pure function of the scenario and its seed."""
    sc = scenario
    dt = sc.dt_control
    gps_every = _ticks(sc.gps_rate, dt)
    feature_every = _ticks(sc.feature_rate, dt)
    n_ticks = int(round(sc.duration / dt))
    frame = sc.frame
    mission = sc.mission
    params = sc.vehicle
    ctrl_cfg = sc.controller
    ekf_cfg = sc.ekf
    conv = sc.convention
    v_target = sc.speed

    gps_rng = rng_streams.stream(sc.seed, rng_streams.GPS)
    attack_rng = rng_streams.stream(sc.seed, rng_streams.ATTACK)
    sensor_noise = rng_streams.stream(sc.seed, rng_streams.SENSORS).standard_normal((n_ticks, 3))
    sensor_noise *= np.array([sc.sensor_noise.compass, sc.sensor_noise.gyro, sc.sensor_noise.odometry])
    sensor_noise = sensor_noise.tolist()

    x0, y0 = geo_to_local(mission.home, frame)
    if sc.initial_heading is None:
        try:
            psi0 = compass_to_math(target_yaw_from_gps(mission.home, mission.waypoints[0]))
        except DegeneratePair:
            psi0 = 0.0
    else:
        psi0 = wrap_angle(sc.initial_heading)
    state = (x0, y0, psi0, 0.0, 0.0, 0.0)

    ctrl = ControllerState.fresh(ctrl_cfg)
    record = EkfState.initial((x0, y0, 0.0, 0.0), ekf_cfg)
    ekf = ScalarEkf(record, ekf_cfg)
    r_gyro = ekf_cfg.r_gyro
    gps_sigma = ekf_cfg.gps_base_accuracy

    log = SimLog(attack_window=(sc.spoof.start, sc.spoof.end) if sc.spoof else None)
    idx = 0
    fix = None
    psi_t = None  # compass bearing to the active target
    distance = 0.0
    spoof_state = None
    delta = ax = 0.0
    arriving = False  # home accepted on a one-shot mission; closing in on it
    closest = math.inf
    hx, hy = geo_to_local(mission.waypoints[-1], frame) if not mission.loop else (0.0, 0.0)

    for k in range(n_ticks):
        t = k * dt
        x, y, psi, vx, vy, r = state
        n_compass, n_gyro, n_odo = sensor_noise[k]
        compass = wrap_angle(psi + n_compass)
        gyro = r + n_gyro
        odometry = max(0.0, vx + n_odo)
        coefficients = _coefficients(params, odometry, conv) if odometry > VX_FLOOR else None

        gps_tick = k % gps_every == 0
        gps_xy = None
        if gps_tick:
            true_geo = local_to_geo(x, y, frame)
            fix = synthesize_fix(true_geo, sc.gps_noise, t, gps_rng)
            if sc.spoof is not None:
                spoof_state = spoof_phase(sc.spoof, t)
                fix = spoof_fix(fix, sc.spoof, spoof_state, attack_rng)
            if not arriving:
                target, idx, complete = mission_step(mission, fix.position, idx)
                if complete:
                    log.completed = True
                    arriving = not mission.loop
            bias = sc.spoof.bias if spoof_state is not None and spoof_state.phase is Phase.CAPTURED else 0.0
            try:
                psi_t = spoofed_target_yaw(fix.position, target, bias)
            except DegeneratePair:
                pass  # keep the previous bearing
            distance = great_circle_distance(fix.position, target)
            try:
                gps_xy = geo_to_local(fix.position, frame)
            except OutOfFrame:
                gps_xy = None

        # planning and control on the held fix and the current compass heading
        if psi_t is None:
            e = heading_error = 0.0
        else:
            psi_t_math = compass_to_math(psi_t)
            heading_error = wrap_angle(psi_t_math - compass)
            e = cross_track_error(psi_t_math, compass, distance)
        delta = steering_controller(e, heading_error, ctrl_cfg, ctrl, dt, distance)
        ax = speed_controller(v_target, odometry, ctrl_cfg, ctrl, dt)
        log.abs_e_sum += abs(e)
        log.ticks += 1

        try:
            if k > 0:
                ekf.predict(odometry, compass, delta, coefficients, dt)
            ekf.update_gyro(gyro, r_gyro, t)
            if gps_xy is not None:
                sigma = fix.hdop * gps_sigma
                ekf.update_gps(gps_xy[0], gps_xy[1], sigma * sigma, t)
        except (CovarianceNotPSD, SingularInnovationCovariance) as exc:
            raise DivergedSimulation(k, f"estimator: {exc}") from None
        if failsafe_monitor(record, ekf_cfg, t):
            log.alarm_times.append(t)

        if k % feature_every == 0:
            active = spoof_state is not None and spoof_state.active
            est = ekf.x
            p = fix.position
            log.rows.append(FeatureRow(
                t, p.lat, p.lon, fix.hdop, fix.vdop, fix.sat_lock, fix.sat_count, e, delta,
                float(est[0]), float(est[1]), compass, odometry, float(est[2]), float(est[3]), int(active),
            ))
            log.truth.append((t, x, y, psi, vx, vy, r))
            log.estimate.append((t, float(est[0]), float(est[1]), float(est[2]), float(est[3])))
            log.commands.append((t, delta, ax))
            log.phases.append((t, spoof_state.phase if spoof_state is not None else Phase.IDLE))

        if arriving:
            # stop at the closest approach to home, judged on the fused estimate
            d_est = math.hypot(ekf.x[0] - hx, ekf.x[1] - hy)
            if d_est < ARRIVAL_RADIUS or d_est > closest + ARRIVAL_HYSTERESIS:
                break
            closest = min(closest, d_est)
        try:
            state = integrate(state, delta, ax, params, dt, conv)
        except NonFiniteState as exc:
            raise DivergedSimulation(k, str(exc)) from None
    else:
        t = n_ticks * dt
    log.final_state = (t,) + tuple(state)
    return log


def attack_trajectory_check(log: SimLog, clean: SimLog | None = None) -> dict:
    """Compare an attacked run against a clean reference run.

    Reports the attack-window cross-track peak, the peak acceleration
    command, and the unwrapped-heading variance while captured.  Flags are
    raised when attack-window ``|e|`` exceeds the clean 99.9th percentile or
    the heading stalls (captured variance under 10 % of the clean variance).
    """
    clean = clean if clean is not None else log
    e = np.abs(log.column("e")) if log.rows else np.zeros(0)
    labels = log.labels() if log.rows else np.zeros(0, dtype=int)
    phases = np.array([int(p) for _, p in log.phases])
    in_attack = labels == 1
    captured = phases == int(Phase.CAPTURED)
    clean_e = np.abs(clean.column("e"))
    clean_psi = np.unwrap(clean.column("psi"))
    clean_var = float(np.var(clean_psi)) if clean_psi.size else 0.0
    summary = {
        "clean_max_abs_e": float(clean_e.max()) if clean_e.size else 0.0,
        "clean_p999_abs_e": float(np.percentile(clean_e, 99.9)) if clean_e.size else 0.0,
        "attack_max_abs_e": float(e[in_attack].max()) if in_attack.any() else 0.0,
        "max_accel_command": float(max((c[2] for c in log.commands), default=0.0)),
        "max_speed": float(max((s[4] for s in log.truth), default=0.0)),
        "clean_psi_variance": clean_var,
        "captured_psi_variance": float(np.var(np.unwrap(log.column("psi")[captured]))) if captured.any() else None,
        "flags": [],
    }
    if in_attack.any() and summary["attack_max_abs_e"] > summary["clean_p999_abs_e"]:
        summary["flags"].append("cross_track_excursion")
    cv = summary["captured_psi_variance"]
    if cv is not None and clean_var > 0 and cv < 0.1 * clean_var:
        summary["flags"].append("heading_stall")
    return summary


def row_dict(row: FeatureRow) -> dict:
    return asdict(row)
