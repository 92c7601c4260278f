import math

import pytest
import yaml

from gpsids.attack import BiasAngle, FixedTarget, GaussianOffset
from gpsids.config import (
    ConfigError,
    apply_overrides,
    build_scenario,
    default_config,
    dump,
    load_scenario,
    load_yaml,
)
from gpsids.control import ControllerConfig
from gpsids.dynamics import SignConvention
from gpsids.navigation import great_circle_distance
from gpsids.simulation import Scenario


def test_defaults_round_trip_through_yaml():
    tree = default_config()
    again = yaml.safe_load(dump(tree))
    assert again == tree
    sc = build_scenario(again)
    assert sc.duration == 300.0 and sc.spoof is None
    assert sc.controller == ControllerConfig()
    assert sc.convention is SignConvention.STANDARD_STABLE
    assert len(sc.mission.waypoints) == 7 and not sc.mission.loop


def test_empty_config_is_the_default_scenario():
    assert build_scenario({}) == build_scenario(default_config())


def test_overrides():
    data = apply_overrides({"vehicle": {"mass": 2.0}}, ["vehicle.c_yf=3", "seed=7", "spoof.mode=bias_angle"])
    assert data == {"vehicle": {"mass": 2.0, "c_yf": 3}, "seed": 7, "spoof": {"mode": "bias_angle"}}
    sc = build_scenario(data)
    assert sc.vehicle.c_yf == 3.0 and sc.vehicle.mass == 2.0 and sc.seed == 7
    assert isinstance(sc.spoof.mode, BiasAngle)
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nonsense"])


def test_override_does_not_mutate_input():
    base = {"vehicle": {"mass": 2.0}}
    apply_overrides(base, ["vehicle.mass=3"])
    assert base == {"vehicle": {"mass": 2.0}}


@pytest.mark.parametrize("data, key", [
    ({"vehicel": {}}, "vehicel"),
    ({"vehicle": {"mas": 1.0}}, "vehicle.mas"),
    ({"controller": {"inner": {"kq": 1.0}}}, "controller.inner.kq"),
    ({"mission": {"circle": {"radius": 3}, "bogus": 1}}, "mission.bogus"),
    ({"spoof": {"mode": "fixed_target", "strat": 3}}, "spoof.strat"),
    ({"spoof": {"mode": "laser"}}, "spoof.mode"),
    ({"convention": "sideways"}, "convention"),
])
def test_unknown_keys_are_named(data, key):
    with pytest.raises(ConfigError) as info:
        build_scenario(data)
    assert info.value.key == key


@pytest.mark.parametrize("data", [
    {"vehicle": {"mass": "heavy"}},
    {"vehicle": {"mass": -1.0}},
    {"controller": {"inner": [1, 2]}},
    {"gps_noise": {"sat_min": 4.5}},
    {"mission": {"circle": {}, "straight": {}}},
    {"mission": {"home": [200.0, 0.0], "circle": {}}},
    {"gps_rate": 3.0},
])
def test_bad_values_raise_config_error(data):
    with pytest.raises(ConfigError):
        build_scenario(data)


def test_spoof_modes():
    home_sc = build_scenario({})
    home = home_sc.mission.home
    sc = build_scenario({"spoof": {"mode": "fixed_target", "target_offset": {"distance": 500, "bearing": 0.0}}})
    assert isinstance(sc.spoof.mode, FixedTarget)
    assert great_circle_distance(home, sc.spoof.mode.target) == pytest.approx(500.0, rel=1e-4)
    assert (sc.spoof.start, sc.spoof.duration) == (10.0, 300.0)
    sc = build_scenario({"spoof": {"mode": "gaussian_offset", "mu": [0, 0.001], "sigma": [0.0, 0.0001],
                                   "start": 5, "capture_delay": 4}})
    assert sc.spoof.mode == GaussianOffset((0, 0.001), (0.0, 0.0001))
    assert sc.spoof.start == 5.0 and sc.spoof.capture_delay == 4.0
    sc = build_scenario({"spoof": {"mode": "fixed_target", "target": [32.3, -110.9]}})
    assert sc.spoof.mode.target.lat == 32.3


def test_mission_shapes():
    sc = build_scenario({"mission": {"straight": {"length": 30, "bearing": math.pi / 2}, "loop": True}})
    assert len(sc.mission.waypoints) == 2 and sc.mission.loop
    sc = build_scenario({"mission": {"home": [10.0, 20.0], "waypoints": [[10.001, 20.0], [10.0, 20.0]]}})
    assert sc.mission.home.lat == 10.0 and len(sc.mission.waypoints) == 2


def test_yaml_errors_report_the_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("seed: 1\nvehicle:\n  mass: [1, 2\n  c_yf: 2\n")
    with pytest.raises(ConfigError) as info:
        load_yaml(path)
    assert info.value.line is not None and info.value.line >= 3
    assert "line" in str(info.value)


def test_yaml_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_yaml(path)
    (tmp_path / "empty.yaml").write_text("")
    assert load_yaml(tmp_path / "empty.yaml") == {}


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("seed: 4\nduration: 20\nmission:\n  circle: {radius: 4}\n")
    sc, data = load_scenario(path, ["seed=5"])
    assert isinstance(sc, Scenario) and sc.seed == 5 and sc.duration == 20.0
    assert data["mission"] == {"circle": {"radius": 4}}
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.yaml")
