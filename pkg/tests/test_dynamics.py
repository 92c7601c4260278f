import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpsids.dynamics import (
    NearZeroSpeed,
    NonFiniteState,
    SignConvention,
    VehicleParams,
    VehicleState,
    force_lateral_derivatives,
    integrate,
    lateral_derivatives,
    pose_derivatives,
    slip_angles,
    state_matrices,
    step,
    tire_forces,
    wrap_angle,
    _derivative,
)

LIT = SignConvention.PAPER_LITERAL
STD = SignConvention.STANDARD_STABLE
AVT = VehicleParams()

positive = st.floats(0.05, 20.0)
params_st = st.builds(
    lambda m, iz, lf, lr, cf, cr: VehicleParams(m, iz, lf, lr, cf, cr, length=lf + lr + 0.1),
    st.floats(0.5, 50.0), st.floats(0.01, 5.0), st.floats(0.05, 2.0), st.floats(0.05, 2.0), positive, positive,
)


def test_literal_matrix_matches_printed_values():
    m = state_matrices(AVT, 1.0, LIT)
    assert m.a11 == pytest.approx(0.8, rel=1e-12)
    assert m.a12 == 0.0 and m.a21 == 0.0
    assert m.a22 == pytest.approx(1.116493656286044, rel=1e-12)  # (2 * 0.22^2) / 0.0867
    assert m.b11 == pytest.approx(-0.4, rel=1e-12)
    assert m.b21 == pytest.approx(-2.537485582468281, rel=1e-12)
    printed = [0.8, 0.0, 0.0, 1.1169, -0.4, -2.5384]
    for ours, theirs in zip((m.a11, m.a12, m.a21, m.a22, m.b11, m.b21), printed):
        assert abs(ours - theirs) <= 0.005 * abs(theirs)


def test_zero_stiffness_kills_lateral_terms():
    p = VehicleParams(c_yf=0.0, c_yr=0.0)
    for conv in (LIT, STD):
        m = state_matrices(p, 2.0, conv)
        assert not np.any(m.a) and not np.any(m.b)


def test_standard_signs_and_stability_at_testbed_values():
    m = state_matrices(AVT, 1.0, STD)
    assert m.a11 == pytest.approx(-0.8)
    # force balance with F = -C alpha and alpha_f = ... - delta gives +Cf/m
    assert m.b11 == pytest.approx(0.4)
    assert np.all(np.linalg.eigvals(m.a).real <= 0)


@given(params_st, st.floats(0.5, 30.0))
def test_standard_convention_is_stable(p, vx):
    eig = np.linalg.eigvals(state_matrices(p, vx, STD).a)
    assert np.all(eig.real <= 1e-12)


@given(params_st, st.floats(0.1, 10.0), st.floats(1.5, 4.0))
def test_literal_entries_scale_with_speed_as_written(p, vx, k):
    a = state_matrices(p, vx, LIT)
    b = state_matrices(p, k * vx, LIT)
    # a11, a22, b11 go as 1/vx, a12 as 1/vx^2, a21 and b21 do not depend on vx
    assert b.a11 == pytest.approx(a.a11 / k, rel=1e-12, abs=1e-300)
    assert b.a22 == pytest.approx(a.a22 / k, rel=1e-12, abs=1e-300)
    assert b.b11 == pytest.approx(a.b11 / k, rel=1e-12, abs=1e-300)
    assert b.a12 == pytest.approx(a.a12 / k ** 2, rel=1e-12, abs=1e-300)
    assert b.a21 == a.a21 and b.b21 == a.b21


def test_near_zero_speed_rejected():
    with pytest.raises(NearZeroSpeed):
        state_matrices(AVT, 0.005)
    with pytest.raises(NearZeroSpeed):
        slip_angles(VehicleState(vx=0.0), 0.0, AVT)


@pytest.mark.parametrize("vy, r, delta, expected", [
    (0.0, 0.0, 0.0, (0.0, 0.0)),
    (0.1, 0.5, 0.0, (0.21, -0.01)),
    (0.0, 0.0, 0.1, (-0.1, 0.0)),
])
def test_slip_angles(vy, r, delta, expected):
    got = slip_angles(VehicleState(vx=1.0, vy=vy, r=r), delta, AVT)
    assert got == pytest.approx(expected, abs=1e-15)


def test_tire_forces():
    assert tire_forces(0.0, 0.0, AVT) == (0.0, 0.0)
    assert tire_forces(0.21, -0.01, AVT) == pytest.approx((-0.21, 0.01))
    stiff = VehicleParams(c_yf=3.0)
    assert tire_forces(0.2, 0.0, stiff)[0] == pytest.approx(3.0 * tire_forces(0.2, 0.0, AVT)[0])


def test_lateral_derivatives_from_printed_matrix():
    m = state_matrices(AVT, 1.0, LIT)
    assert lateral_derivatives(VehicleState(vx=1.0, vy=0.1), 0.0, m) == pytest.approx((0.08, 0.0))
    assert lateral_derivatives(VehicleState(vx=1.0), 0.0, m) == (0.0, 0.0)
    vy_dot, r_dot = lateral_derivatives(VehicleState(vx=1.0), 0.1, m)
    assert vy_dot == pytest.approx(-0.04)
    assert r_dot == pytest.approx(-0.2538, abs=1e-4)


def test_force_form_equals_matrix_form_on_random_states():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(1000):
        p = VehicleParams(*rng.uniform([0.5, 0.01, 0.05, 0.05, 0.0, 0.0], [20, 2, 1, 1, 50, 50]), length=2.5)
        s = VehicleState(vx=float(rng.uniform(0.05, 30)), vy=float(rng.normal()), r=float(rng.normal()))
        delta = float(rng.uniform(-0.6, 0.6))
        a = force_lateral_derivatives(s, delta, p)
        b = lateral_derivatives(s, delta, state_matrices(p, s.vx, STD))
        worst = max(worst, max(abs(x - y) / max(1.0, abs(x)) for x, y in zip(a, b)))
    assert worst < 1e-9


@pytest.mark.parametrize("psi, vx, vy, expected", [
    (0.0, 1.0, 0.0, (1.0, 0.0, 0.0)),
    (math.pi / 2, 1.0, 0.0, (0.0, 1.0, 0.0)),
    (0.0, 1.0, 1.0, (1.0, 1.0, 0.0)),
])
def test_pose_derivatives(psi, vx, vy, expected):
    assert pose_derivatives(VehicleState(psi=psi, vx=vx, vy=vy)) == pytest.approx(expected, abs=1e-15)


@given(st.floats(-math.pi, math.pi), st.floats(0.01, 10), st.floats(-3, 3))
def test_pose_derivatives_match_slip_angle_form(psi, vx, vy):
    v, beta = math.hypot(vx, vy), math.atan2(vy, vx)
    got = pose_derivatives(VehicleState(psi=psi, vx=vx, vy=vy))
    assert got[0] == pytest.approx(v * math.cos(psi + beta), abs=1e-12)
    assert got[1] == pytest.approx(v * math.sin(psi + beta), abs=1e-12)


def test_straight_line_step():
    s = step(VehicleState(vx=1.0), 0.0, 0.0, AVT, 0.01)
    assert s == VehicleState(x=pytest.approx(0.01, abs=1e-15), vx=1.0)


def test_one_step_close_to_euler_reference():
    s = step(VehicleState(vx=1.0, vy=0.1), 0.0, 0.0, AVT, 0.01, LIT)
    assert abs(s.vy - 0.1008) <= 0.01 ** 2
    assert s.vy == pytest.approx(0.1 * math.exp(0.008), rel=1e-10)  # a21 = 0 decouples vy


def test_two_half_steps_match_one_full_step():
    s0 = VehicleState(psi=0.3, vx=1.0, vy=0.05, r=0.2)
    one = step(s0, 0.1, 0.2, AVT, 0.02)
    two = step(step(s0, 0.1, 0.2, AVT, 0.01), 0.1, 0.2, AVT, 0.01)
    assert max(abs(a - b) for a, b in zip(one.as_tuple(), two.as_tuple())) <= 1e-6


def test_step_validates_inputs():
    with pytest.raises(ValueError):
        step(VehicleState(vx=1.0), 0.0, 0.0, AVT, 0.2)
    with pytest.raises(ValueError):
        step(VehicleState(vx=-1.0), 0.0, 0.0, AVT, 0.01)
    with pytest.raises(NonFiniteState):
        step(VehicleState(vx=1.0, vy=math.inf), 0.0, 0.0, AVT, 0.01)


def test_lateral_states_frozen_below_floor():
    s = step(VehicleState(vx=0.0, vy=0.2, r=0.1), 0.3, 0.0, AVT, 0.01)
    # lateral derivatives are zero, so vy and r only move through the ax + r vy coupling
    assert s.vy == 0.2 and s.r == 0.1


def test_inlined_integrator_agrees_with_reference_derivative():
    rng = np.random.default_rng(4)
    for conv in (LIT, STD):
        for _ in range(200):
            s = (0.0, 0.0, float(rng.uniform(-3, 3)), float(rng.uniform(0, 3)),
                 float(rng.normal(0, 0.3)), float(rng.normal(0, 0.3)))
            delta, ax, dt = float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-1, 1)), 0.01
            k1 = _derivative(s, delta, ax, AVT, conv)
            k2 = _derivative(tuple(a + 0.5 * dt * k for a, k in zip(s, k1)), delta, ax, AVT, conv)
            k3 = _derivative(tuple(a + 0.5 * dt * k for a, k in zip(s, k2)), delta, ax, AVT, conv)
            k4 = _derivative(tuple(a + dt * k for a, k in zip(s, k3)), delta, ax, AVT, conv)
            ref = [a + dt / 6 * (q1 + 2 * q2 + 2 * q3 + q4) for a, q1, q2, q3, q4 in zip(s, k1, k2, k3, k4)]
            ref[3] = max(ref[3], 0.0)
            ref[2] = wrap_angle(ref[2])
            got = integrate(s, delta, ax, AVT, dt, conv)
            assert got == pytest.approx(tuple(ref), rel=1e-12, abs=1e-14)


@given(st.floats(-1e3, 1e3))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(0.0, 3.0), st.floats(-0.5, 0.5), st.floats(-0.7, 0.7),
       st.floats(-2.0, 1.0))
def test_step_is_deterministic_and_keeps_psi_wrapped(psi, vx, vy, delta, ax):
    s = VehicleState(psi=psi, vx=vx, vy=vy, r=0.1)
    a = step(s, delta, ax, AVT, 0.01)
    b = step(s, delta, ax, AVT, 0.01)
    assert a == b
    assert -math.pi < a.psi <= math.pi
    assert a.vx >= 0.0


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass=0.0)
    with pytest.raises(ValueError):
        VehicleParams(l_f=0.4, l_r=0.4)
