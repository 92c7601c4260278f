"""Desk-scale analogs of the seven field and simulation experiments.

Each ``experiment_N`` returns a :class:`Report` whose checks carry the
acceptance thresholds; ``reproduce`` dispatches by number.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from . import detection as det
from .attack import FixedTarget, SpoofConfig, bearing_offset_target
from .dynamics import SignConvention, VehicleParams, state_matrices
from .navigation import GeoPoint, LocalFrame, circular_mission, local_to_geo, math_to_compass
from .simulation import Scenario, SimLog, attack_trajectory_check, run

PRINTED_MATRIX = {"a11": 0.8, "a12": 0.0, "a21": 0.0, "a22": 1.1169, "b11": -0.4, "b21": -2.5384}
HOME = GeoPoint(32.2319, -110.9501)
TABLE_V = {"attack_start": 142.0, "ml_alarm": 152.0, "baseline_alarm": 165.0}


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str  # one of "<", "<=", ">", ">=", "=="

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return False
        if self.op == "==":
            return math.isclose(v, t, rel_tol=0.0, abs_tol=1e-9)
        return {"<": v < t, "<=": v <= t, ">": v > t, ">=": v >= t}[self.op]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.6g} {self.op} {self.threshold:g}"


@dataclass
class Report:
    experiment: int
    title: str
    checks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [f"Experiment {self.experiment}: {self.title} ({self.elapsed:.1f} s)"]
        lines += ["  " + c.line() for c in self.checks]
        for k, v in self.details.items():
            if not isinstance(v, (list, dict)):
                lines.append(f"  {k} = {v}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "title": self.title, "passed": self.passed,
                "elapsed": self.elapsed,
                "checks": [{"name": c.name, "value": c.value, "threshold": c.threshold, "op": c.op,
                            "passed": c.passed} for c in self.checks],
                "details": self.details}


# --- 1: vehicle model and closed loop --------------------------------------

def matrix_errors(params: VehicleParams = VehicleParams()) -> dict:
    """Relative error of each literal-convention entry against the printed matrix at vx = 1."""
    sm = state_matrices(params, 1.0, SignConvention.PAPER_LITERAL)
    out = {}
    for name, printed in PRINTED_MATRIX.items():
        ours = getattr(sm, name)
        out[name] = abs(ours - printed) / abs(printed) if printed else abs(ours)
    return out


def circle_scenario(seed: int = 0, **kw) -> Scenario:
    kw.setdefault("duration", 300.0)
    return Scenario(circular_mission(HOME, 5.0, 7), seed=seed, **kw)


def home_distance(log: SimLog) -> float:
    """True distance from the final position to home (the frame origin)."""
    _, x, y = log.final_state[:3]
    return math.hypot(x, y)


def experiment_1(seed: int = 0) -> Report:
    t = time.perf_counter()
    errs = matrix_errors()
    log = run(circle_scenario(seed))
    rep = Report(1, "vehicle model and waypoint following")
    rep.checks.append(Check("max relative matrix error", max(errs.values()), 0.005, "<="))
    rep.checks.append(Check("mission completed", float(log.completed), 1.0, ">="))
    rep.checks.append(Check("mean |e| (m)", log.mean_abs_e, 0.5, "<"))
    rep.checks.append(Check("final distance to home (m)", home_distance(log), 2.0, "<="))
    rep.details.update(matrix_errors=errs, duration=log.truth[-1][0])
    rep.elapsed = time.perf_counter() - t
    return rep


# --- 2: attack impact ------------------------------------------------------

def perpendicular_spoof(clean: SimLog, home: GeoPoint, start: float = 10.0, capture_delay: float = 5.0,
                        distance: float = 500.0, duration: float = 300.0) -> SpoofConfig:
    """Put a fixed spoof target ``distance`` m to the left of the vehicle at capture.

    The pose comes from the clean run, so the spoofed position sits off the
    path rather than along it.
    """
    truth = np.array(clean.truth)
    i = min(int(np.searchsorted(truth[:, 0], start + capture_delay)), len(truth) - 1)
    _, x, y, psi = truth[i, :4]
    here = local_to_geo(float(x), float(y), LocalFrame(home))
    target = bearing_offset_target(here, distance, math_to_compass(float(psi) + math.pi / 2))
    return SpoofConfig(FixedTarget(target), start, duration, capture_delay=capture_delay)


def experiment_2(seed: int = 7) -> Report:
    t = time.perf_counter()
    scenario = circle_scenario(seed)
    clean = run(scenario)
    spoof = perpendicular_spoof(clean, scenario.mission.home)
    attacked = run(replace(scenario, spoof=spoof))
    s = attack_trajectory_check(attacked, clean)
    ratio = s["attack_max_abs_e"] / max(s["clean_max_abs_e"], 1e-12)
    var_ratio = (s["captured_psi_variance"] / s["clean_psi_variance"]
                 if s["captured_psi_variance"] is not None and s["clean_psi_variance"] > 0 else float("nan"))
    rep = Report(2, "attack impact on navigation")
    rep.checks.append(Check("attack max |e| / clean max |e|", ratio, 100.0, ">"))
    rep.checks.append(Check("captured yaw variance / clean yaw variance", var_ratio, 0.1, "<"))
    rep.details.update(s)
    rep.details["ekf_first_alarm"] = attacked.first_alarm(spoof.start)
    rep.elapsed = time.perf_counter() - t
    return rep


# --- 3, 4, 6, 7: detection quality and margins ------------------------------

DETECTION_MODELS = ("mlp", "rf", "dt")
F1_FLOORS = {"mlp": 0.90, "rf": 0.85, "dt": 0.85}


def cross_validate_models(rows, seed: int = 0, k: int = 5, models=DETECTION_MODELS) -> dict:
    return {kind: det.cross_validate(rows, det.ModelSpec(kind), k=k, seed=seed) for kind in models}


def detection_report(number: int, title: str, rows, seed: int, k: int = 5) -> tuple[Report, dict]:
    t = time.perf_counter()
    results = cross_validate_models(rows, seed, k)
    rep = Report(number, title)
    bal = ds.balance(rows)
    rep.checks.append(Check("rows", float(bal["rows"]), 20000.0, ">="))
    for kind, cv in results.items():
        rep.checks.append(Check(f"{kind} mean F1", cv.mean_f1, F1_FLOORS[kind], ">="))
        rep.details[f"{kind}_fold_f1"] = [m.f1 for m in cv.metrics]
    rep.details.update(bal)
    rep.elapsed = time.perf_counter() - t
    return rep, results


def margin_report(number: int, title: str, cv: det.CrossValidation, kind: str = "mlp") -> Report:
    t = time.perf_counter()
    scores = np.asarray(cv.scores)
    labels = np.asarray(cv.labels)
    table = det.threshold_sweep(scores[labels == 0], scores[labels == 1])
    best = det.best_margin(table)
    rep = Report(number, title)
    rep.checks.append(Check(f"{kind} fp_rate at [{best.lo}, {best.hi}]", best.fp_rate, 0.01, "<="))
    rep.checks.append(Check(f"{kind} fn_rate at [{best.lo}, {best.hi}]", best.fn_rate, 0.01, "<="))
    rep.details["sweep"] = [vars(r) for r in table]
    rep.details["best_margin"] = f"[{best.lo}, {best.hi}]"
    rep.elapsed = time.perf_counter() - t
    return rep


def field_rows(count: int = 68, seed: int = 11, mapper=map) -> list:
    return ds.generate("field", count, seed, mapper=mapper)


def urban_rows(count: int = 17, seed: int = 12, mapper=map) -> list:
    return ds.generate("urban", count, seed, mapper=mapper)


def experiment_3(seed: int = 11, count: int = 68, mapper=map) -> Report:
    rows = field_rows(count, seed, mapper)
    return detection_report(3, "detection quality, field profile", rows, seed)[0]


def experiment_4(seed: int = 11, count: int = 68, mapper=map) -> Report:
    rows = field_rows(count, seed, mapper)
    cv = det.cross_validate(rows, det.ModelSpec("mlp"), k=5, seed=seed)
    return margin_report(4, "threshold margin, field profile", cv)


def experiment_6(seed: int = 12, count: int = 17, mapper=map) -> Report:
    rows = urban_rows(count, seed, mapper)
    return detection_report(6, "detection quality, urban profile", rows, seed)[0]


def experiment_7(seed: int = 12, count: int = 17, mapper=map) -> Report:
    rows = urban_rows(count, seed, mapper)
    cv = det.cross_validate(rows, det.ModelSpec("mlp"), k=5, seed=seed)
    return margin_report(7, "threshold margin, urban profile", cv)


# --- 5: latency ------------------------------------------------------------

@dataclass
class LatencyRun:
    seed: int
    capture_delay: float
    ml: float | None  # s after onset; None when the detector never alarmed
    baseline: float | None  # EKF failsafe latency, s

    @property
    def ml_first(self) -> bool:
        if self.ml is None:
            return False
        return self.baseline is None or self.ml < self.baseline

    @property
    def improvement(self) -> float | None:
        if self.ml is None or not self.baseline:
            return None
        return det.latency_improvement(self.ml, self.baseline)


def table_v() -> dict:
    """Scripted fixture: one ML alarm and one baseline alarm after the same onset."""
    t0 = TABLE_V["attack_start"]
    ml = det.detection_latency([TABLE_V["ml_alarm"]], t0)
    base = det.detection_latency([TABLE_V["baseline_alarm"]], t0)
    return {"ml_latency": ml, "baseline_latency": base, "improvement": det.latency_improvement(ml, base)}


def latency_runs(detector: det.Detector, n_runs: int = 20, seed: int = 99,
                 profile: ds.FieldProfile = ds.FieldProfile(attack_duration=40.0)) -> list:
    """Score ``n_runs`` fresh attack scenarios row by row; compare with the EKF failsafe."""
    scenarios = []
    count = 4 * n_runs
    while len(scenarios) < n_runs:
        scenarios = [s for s in ds.field_scenarios(count, seed, profile) if s.spoof is not None]
        count *= 2
    out = []
    for s in scenarios[:n_runs]:
        log = run(s)
        X, _ = ds.feature_matrix(log.rows)
        flags = detector.scores(X) > detector.threshold
        t0 = s.spoof.start
        try:
            ml = det.detection_latency(list(zip(log.times.tolist(), flags.tolist())), t0)
        except det.NoAlarm:
            ml = None
        try:
            base = det.detection_latency(log.alarm_times, t0)
        except det.NoAlarm:
            base = None
        out.append(LatencyRun(s.seed, s.spoof.capture_delay, ml, base))
    return out


def experiment_5(seed: int = 7, train_count: int = 24, n_runs: int = 20, kind: str = "mlp",
                 mapper=map) -> Report:
    t = time.perf_counter()
    rows = ds.generate("field", train_count, seed, mapper=mapper)
    detector = det.train(rows, det.ModelSpec(kind), seed=seed)
    runs = latency_runs(detector, n_runs, seed + 1000)
    improvements = [r.improvement for r in runs if r.improvement is not None]
    fixture = table_v()
    rep = Report(5, "detection latency, ML detector vs EKF failsafe")
    rep.checks.append(Check("scenarios", float(len(runs)), 20.0, ">="))
    rep.checks.append(Check("fraction with ML alarm first", sum(r.ml_first for r in runs) / len(runs), 0.9, ">="))
    rep.checks.append(Check("median improvement", float(np.median(improvements)) if improvements else float("nan"),
                            0.3, ">="))
    rep.checks.append(Check("fixture ML latency (s)", fixture["ml_latency"], 10.0, "=="))
    rep.checks.append(Check("fixture baseline latency (s)", fixture["baseline_latency"], 23.0, "=="))
    rep.checks.append(Check("fixture improvement", round(fixture["improvement"], 4), 0.5652, "=="))
    rep.details["runs"] = [vars(r) for r in runs]
    rep.details["ml_no_alarm"] = sum(r.ml is None for r in runs)
    rep.details["baseline_no_alarm"] = sum(r.baseline is None for r in runs)
    rep.details["fixture"] = fixture
    rep.elapsed = time.perf_counter() - t
    return rep


EXPERIMENTS = {1: experiment_1, 2: experiment_2, 3: experiment_3, 4: experiment_4,
               5: experiment_5, 6: experiment_6, 7: experiment_7}


def reproduce(number: int, **kw) -> Report:
    if number not in EXPERIMENTS:
        raise KeyError(f"experiment {number} does not exist; choose 1-7")
    return EXPERIMENTS[number](**kw)
