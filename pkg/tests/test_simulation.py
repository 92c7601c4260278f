import math

import numpy as np
import pytest

from gpsids.attack import FixedTarget, GaussianOffset, Phase, SpoofConfig
from gpsids.dynamics import SignConvention
from gpsids.navigation import GeoPoint, GpsNoiseModel, circular_mission, offset, straight_mission
from gpsids.simulation import (
    COLUMNS,
    FEATURES,
    DivergedSimulation,
    FeatureRow,
    Scenario,
    SensorNoise,
    attack_trajectory_check,
    run,
)

HOME = GeoPoint(32.2319, -110.9501)
LOOP = circular_mission(HOME, 5.0, 7, loop=True)


@pytest.fixture(scope="module")
def clean():
    return run(Scenario(LOOP, duration=320.0, seed=3))


@pytest.fixture(scope="module")
def attacked():
    spoof = SpoofConfig(FixedTarget(offset(HOME, 500.0, 0.0)), start=10.0, duration=300.0)
    return run(Scenario(LOOP, spoof=spoof, duration=320.0, seed=3))


def test_feature_time_base(clean):
    assert clean.times.tolist() == [float(k) for k in range(320)]
    assert len(clean.truth) == len(clean.estimate) == len(clean.commands) == len(clean.phases) == 320
    assert clean.ticks == 32000


def test_labels_cover_attack_window_exactly(attacked):
    labels, times = attacked.labels(), attacked.times
    assert labels.sum() == 300
    assert times[labels == 1].min() == 10.0 and times[labels == 1].max() == 309.0
    assert attacked.attack_window == (10.0, 310.0)
    phases = dict(attacked.phases)
    assert phases[9.0] is Phase.IDLE and phases[10.0] is Phase.JAMMING
    assert phases[15.0] is Phase.CAPTURED and phases[310.0] is Phase.ENDED


def test_clean_run_has_no_labels_or_flags(clean):
    assert clean.labels().sum() == 0 and clean.attack_window is None
    assert attack_trajectory_check(clean)["flags"] == []


def test_attacked_run_is_flagged(clean, attacked):
    report = attack_trajectory_check(attacked, clean)
    assert report["flags"] == ["cross_track_excursion", "heading_stall"]
    assert report["attack_max_abs_e"] > 100.0


def test_null_offset_attack_leaves_the_trajectory_alone(clean):
    spoof = SpoofConfig(GaussianOffset(), start=10.0, duration=300.0, capture_delay=0.0, masking_sigma=0.0)
    log = run(Scenario(LOOP, spoof=spoof, duration=320.0, seed=3))
    assert log.truth == clean.truth
    assert [r.features() for r in log.rows] == [r.features() for r in clean.rows]
    report = attack_trajectory_check(log, clean)
    assert report["attack_max_abs_e"] <= report["clean_max_abs_e"]
    assert "heading_stall" not in report["flags"]


def test_runs_are_deterministic():
    a = run(Scenario(LOOP, duration=30.0, seed=5))
    b = run(Scenario(LOOP, duration=30.0, seed=5))
    c = run(Scenario(LOOP, duration=30.0, seed=6))
    assert a.rows == b.rows and a.alarm_times == b.alarm_times
    assert a.rows != c.rows


def test_circle_mission_returns_home():
    log = run(Scenario(circular_mission(HOME, 5.0, 7), duration=300.0, seed=0))
    assert log.completed
    t, x, y = log.final_state[:3]
    assert t < 300.0 and math.hypot(x, y) <= 2.0
    assert log.mean_abs_e < 0.5


def test_unfinished_run_records_final_state_at_duration():
    log = run(Scenario(straight_mission(HOME, 50.0, 0.0), duration=5.0))
    assert log.final_state[0] == 5.0 and not log.completed


def test_clean_run_keeps_speed_and_no_alarms(clean):
    assert max(s[4] for s in clean.truth) < 0.35
    assert clean.first_alarm() is None


def test_zero_noise_run_fuses_truth():
    log = run(Scenario(LOOP, duration=60.0, gps_noise=GpsNoiseModel.zero(), sensor_noise=SensorNoise.zero()))
    err = [math.hypot(tr[1] - es[1], tr[2] - es[2]) for tr, es in zip(log.truth, log.estimate)]
    assert max(err[5:]) < 0.05


def test_unstable_convention_diverges_cleanly():
    with pytest.raises(DivergedSimulation) as info:
        run(Scenario(LOOP, duration=300.0, convention=SignConvention.PAPER_LITERAL))
    assert info.value.tick > 0


def test_row_layout():
    assert COLUMNS[0] == "timestamp" and COLUMNS[-1] == "label"
    assert set(FEATURES) < set(COLUMNS)
    with pytest.raises(ValueError):
        FeatureRow(*([0.0] * 15), label=2)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(LOOP, duration=0.0)
    with pytest.raises(ValueError):
        Scenario(LOOP, gps_rate=3.0)
    with pytest.raises(ValueError):
        Scenario(LOOP, dt_control=0.5)
    assert Scenario(LOOP, v_target=None).speed == Scenario(LOOP).vehicle.nominal_speed


def test_feature_rows_are_finite(attacked):
    values = np.array([r.features() for r in attacked.rows], dtype=float)
    assert np.isfinite(values).all()
