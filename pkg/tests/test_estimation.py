import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpsids.control import ControlCommand
from gpsids.dynamics import SignConvention, VehicleParams, state_matrices, _coefficients
from gpsids.estimation import (
    CHANNELS,
    GPS_G,
    GYRO_G,
    CovarianceNotPSD,
    EkfConfig,
    EkfState,
    ScalarEkf,
    SensorBundle,
    SingularInnovationCovariance,
    ekf_predict,
    ekf_update,
    failsafe_monitor,
    record_nis,
    transition,
)

AVT = VehicleParams()
CFG = EkfConfig()
DT = 0.01


def fresh(x0=(0.0, 0.0, 0.0, 0.0), cfg=CFG):
    return EkfState.initial(x0, cfg)


def test_identity_transition_leaves_estimate_and_covariance():
    s = fresh((1.0, 2.0, 0.0, 0.3))
    s.P = np.diag([1.0, 2.0, 0.0, 0.5])
    zero = state_matrices(VehicleParams(c_yf=0.0, c_yr=0.0), 1.0)
    out = ekf_predict(s, ControlCommand(0.0, 0.0), zero, np.zeros((4, 4)), DT, SensorBundle(0.0, 0.7))
    assert np.array_equal(out.x, s.x)
    assert np.allclose(out.P, s.P, atol=0.0)


def test_trace_grows_without_updates():
    s = fresh()
    s.P = np.zeros((4, 4))  # from zero the Lyapunov iteration is monotone
    m = state_matrices(AVT, 1.0)
    traces = []
    for _ in range(50):
        s = ekf_predict(s, ControlCommand(0.1, 0.0), m, CFG.Q, DT, SensorBundle(1.0, 0.2))
        traces.append(np.trace(s.P))
    assert all(b > a for a, b in zip(traces, traces[1:]))


def test_one_predict_step_by_hand():
    s = fresh((0.0, 0.0, 0.1, 0.0))
    m = state_matrices(AVT, 1.0, SignConvention.PAPER_LITERAL)
    out = ekf_predict(s, ControlCommand(0.0, 0.0), m, np.zeros((4, 4)), DT, SensorBundle(0.0, 0.0))
    assert out.x[2] == pytest.approx(0.1008, abs=1e-15)  # (1 + 0.8 dt) * 0.1
    assert out.x[3] == 0.0
    assert out.x[1] == pytest.approx(0.1 * DT)  # lateral velocity seen in the north axis at psi = 0
    F = transition(0.0, m, DT)
    assert np.allclose(out.x, F @ s.x)


def test_zero_innovation_update_is_identity():
    s = fresh((1.0, -2.0, 0.3, 0.1))
    out, nu = ekf_update(s, GPS_G @ s.x, GPS_G, np.eye(2) * 0.5)
    assert np.array_equal(out.x, s.x) and not np.any(nu)
    out, nu = ekf_update(s, [0.1], GYRO_G, [[1e-4]])
    assert np.array_equal(out.x, s.x)


def test_scalar_kalman_step_by_hand():
    s = fresh()
    s.P = np.eye(4)
    out, nu = ekf_update(s, [2.0], GYRO_G, [[1.0]])
    assert nu[0] == 2.0
    assert out.x[3] == pytest.approx(1.0)  # K = 0.5
    assert out.P[3, 3] == pytest.approx(0.5)


def test_update_rejects_bad_shapes_and_singular_covariance():
    s = fresh()
    with pytest.raises(ValueError):
        ekf_update(s, [1.0, 2.0], GYRO_G, [[1.0]])
    s.P = np.zeros((4, 4))
    with pytest.raises(SingularInnovationCovariance):
        ekf_update(s, [1.0], GYRO_G, [[0.0]])
    with pytest.raises(SingularInnovationCovariance):
        ekf_update(s, [1.0, 1.0], GPS_G, np.zeros((2, 2)))


def test_covariance_repair_failure_raises():
    s = fresh()
    s.P = -np.eye(4)
    with pytest.raises(CovarianceNotPSD):
        ekf_predict(s, ControlCommand(0, 0), None, CFG.Q, DT, SensorBundle(0.0, 0.0))


def _random_spd(rng, n=4):
    A = rng.normal(size=(n, n))
    return A @ A.T + 1e-3 * np.eye(n)


@given(st.integers(0, 2**32 - 1))
def test_trace_never_increases_in_update(seed):
    rng = np.random.default_rng(seed)
    s = fresh(tuple(rng.normal(size=4)))
    s.P = _random_spd(rng)
    before = np.trace(s.P)
    if rng.integers(2):
        out, _ = ekf_update(s, rng.normal(size=2), GPS_G, np.eye(2) * float(rng.uniform(1e-3, 2)))
    else:
        out, _ = ekf_update(s, rng.normal(size=1), GYRO_G, [[float(rng.uniform(1e-3, 2))]])
    assert np.trace(out.P) <= before + 1e-12


def test_zero_noise_estimate_converges_to_truth():
    cfg = EkfConfig(q=(0.0, 0.0, 0.0, 0.0))
    s = fresh((0.5, -0.5, 0.0, 0.0), cfg)
    truth = np.array([0.0, 0.0, 0.05, 0.1])
    for k in range(100):
        psi, vx, delta = 0.3 + 0.01 * k, 1.0, 0.1 * math.sin(0.1 * k)
        m = state_matrices(AVT, vx)
        if k:
            truth = transition(psi, m, DT) @ truth + np.array(
                [vx * math.cos(psi) * DT, vx * math.sin(psi) * DT, m.b11 * delta * DT, m.b21 * delta * DT])
            s = ekf_predict(s, ControlCommand(delta, 0.0), m, cfg.Q, DT, SensorBundle(vx, psi))
        s, _ = ekf_update(s, [truth[3]], GYRO_G, [[1e-12]])
        s, _ = ekf_update(s, truth[:2], GPS_G, np.eye(2) * 1e-12)
    assert np.linalg.norm(s.x - truth) < 1e-6


def test_scalar_filter_matches_reference_functions():
    rng = np.random.default_rng(8)
    ref = fresh((1.0, 2.0, 0.1, -0.1))
    fast = ScalarEkf(fresh((1.0, 2.0, 0.1, -0.1)), CFG)
    for k in range(3000):
        vx = float(rng.choice([0.0, rng.uniform(0.02, 3.0)]))
        psi, delta = float(rng.uniform(-3, 3)), float(rng.uniform(-0.5, 0.5))
        m = state_matrices(AVT, vx) if vx > 0.01 else None
        coeffs = _coefficients(AVT, vx, SignConvention.STANDARD_STABLE) if m is not None else None
        ref = ekf_predict(ref, ControlCommand(delta, 0.0), m, CFG.Q, DT, SensorBundle(vx, psi))
        fast.predict(vx, psi, delta, coeffs, DT)
        z = float(rng.normal(0, 0.1))
        ref, _ = ekf_update(ref, [z], GYRO_G, [[CFG.r_gyro]], channels=("gyro",), t=k * DT)
        fast.update_gyro(z, CFG.r_gyro, k * DT)
        if k % 100 == 0:
            zx, zy, r = float(rng.normal(1, 1)), float(rng.normal(2, 1)), float(rng.uniform(0.001, 1))
            ref, _ = ekf_update(ref, [zx, zy], GPS_G, np.eye(2) * r, channels=("gps_x", "gps_y"), t=k * DT)
            fast.update_gps(zx, zy, r, k * DT)
        assert np.allclose(fast.x, ref.x, rtol=1e-9, atol=1e-12)
        assert np.allclose(fast.P, ref.P, rtol=1e-9, atol=1e-12)
    assert fast.P.T.tolist() == fast.P.tolist()


def test_covariance_stays_symmetric_psd_over_random_cycles():
    rng = np.random.default_rng(11)
    s = fresh()
    for _ in range(5_000):
        vx = float(rng.uniform(0.0, 3.0))
        m = state_matrices(AVT, vx) if vx > 0.01 else None
        s = ekf_predict(s, ControlCommand(float(rng.uniform(-0.5, 0.5)), 0.0), m, CFG.Q, DT,
                        SensorBundle(vx, float(rng.uniform(-math.pi, math.pi))))
        if rng.random() < 0.5:
            s, _ = ekf_update(s, rng.normal(size=1), GYRO_G, [[CFG.r_gyro]])
        if rng.random() < 0.05:
            s, _ = ekf_update(s, rng.normal(size=2), GPS_G, np.eye(2) * float(rng.uniform(1e-4, 1.0)))
        assert np.abs(s.P - s.P.T).max() < 1e-9
        assert s.P.diagonal().min() >= 0.0
    assert np.linalg.eigvalsh(s.P).min() > -1e-9


# --- failsafe ----------------------------------------------------------------

def _scripted(anomalous: dict, until: float, rate=100):
    """Feed NIS values (20 when anomalous, 1 otherwise) and collect alarm times."""
    s = fresh()
    alarms = []
    for k in range(int(until * rate) + 1):
        t = k / rate
        for ch in CHANNELS:
            lo, hi = anomalous.get(ch, (math.inf, math.inf))
            record_nis(s, ch, 0.0, 20.0 if lo <= t < hi else 1.0, t)
        if failsafe_monitor(s, CFG, t):
            alarms.append(t)
    return alarms


def test_failsafe_quiet_when_nominal():
    assert _scripted({}, 5.0) == []


def test_failsafe_needs_full_window():
    assert _scripted({"gps_x": (1.0, 1.5), "gyro": (1.0, 1.5)}, 5.0) == []


def test_failsafe_fires_when_window_completes():
    alarms = _scripted({"gps_x": (1.0, 3.0), "gps_y": (1.0, 3.0)}, 5.0)
    assert alarms and alarms[0] == pytest.approx(2.0)


@given(st.sampled_from(CHANNELS), st.floats(10.0, 1e12))
def test_failsafe_ignores_single_channel(channel, magnitude):
    s = fresh()
    for k in range(500):
        record_nis(s, channel, 0.0, magnitude, k / 100)
        assert not failsafe_monitor(s, CFG, k / 100)


def test_nis_history_is_bounded():
    s = EkfState.initial((0, 0, 0, 0), EkfConfig(history=8))
    for k in range(100):
        record_nis(s, "gyro", 0.0, 1.0, float(k))
    assert isinstance(s.nis_history["gyro"], deque) and len(s.nis_history["gyro"]) == 8


def test_config_validation():
    with pytest.raises(ValueError):
        EkfConfig(window=0.0)
    with pytest.raises(ValueError):
        EkfConfig(q=(1.0,))
    with pytest.raises(ValueError):
        SensorBundle(math.nan, 0.0)
    assert np.allclose(CFG.r_gps(2.0), np.eye(2) * (2.0 * CFG.gps_base_accuracy) ** 2)
