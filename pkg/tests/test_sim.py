import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import bundled_run, skeleton_path
from safehandover.kinematics import Pose
from safehandover.perception import dump_skeleton_trajectory, load_skeleton_trajectory
from safehandover.sim import (
    STEP_ORDER,
    ConfigError,
    IncompleteLog,
    ScenarioConfig,
    bundled_scenarios,
    compare_runs,
    load_scenario,
    run_scenario,
)

FULL_TIMELINE = ["Idle", "Reach", "Deliver", "Return", "Home", "Idle"]


@pytest.fixture
def static_config(tmp_path):
    """Kinova scenario without events, replaying a motionless human."""
    frames = load_skeleton_trajectory(skeleton_path("static_near"))
    still = [replace(frames[-1], t=f.t) for f in frames]
    path = tmp_path / "still.jsonl"
    dump_skeleton_trajectory(still, path)
    cfg = load_scenario("kinova_bright_near")
    return replace(cfg, name="still", skeleton=path, events=(), duration=3.0)


def test_eight_bundled_scenarios():
    names = bundled_scenarios()
    assert len(names) == 8
    assert {n.split("_")[0] for n in names} == {"fanuc", "kinova"}


def test_empty_script_stays_idle(static_config):
    log = run_scenario(static_config)
    assert log.complete
    assert set(log.stage) == {"Idle"}
    assert not log.goals
    d = np.asarray(log.d)
    assert np.all(d[1:] == d[1])
    assert np.all(np.asarray(log.q) == np.asarray(log.q)[0])


def test_kinova_full_timeline():
    log, _ = bundled_run("kinova_bright_near")
    assert log.complete, log.error
    assert [s for s, _ in log.timeline] == FULL_TIMELINE
    assert min(log.d) >= log.d_min - 1e-6
    assert log.min_step_distance >= log.d_min - 1e-6
    assert [g["kind"] for g in log.goals] == ["object", "delivery", "object_home", "home"]


def test_log_invariants():
    log, _ = bundled_run("kinova_dark_far")
    t = np.asarray(log.t)
    assert len(t) == round(22.0 * 30) + 1
    assert np.allclose(np.diff(t), 1 / 30, atol=1e-12)
    s = log.summary()
    assert s["min_distance"] == min(log.d)
    assert s["max_tracking_error"] == max(log.track_err)
    assert s["step_order"] == list(STEP_ORDER) == ["perception", "task", "tracking", "safety", "integrate"]
    frame_t = np.asarray(log.frame_t)
    ok = ~np.isnan(frame_t)
    assert np.all(frame_t[ok] <= t[ok] + 1e-12)
    for e in log.events_consumed:
        assert e["t"] >= e["scheduled"] - 1e-12
    sd = log.stage_durations()
    assert sum(sd.values()) == pytest.approx(t[-1])


def test_delivery_goal_records_perception():
    log, _ = bundled_run("kinova_dark_near")
    deliver = next(g for g in log.goals if g["kind"] == "delivery")
    assert np.allclose(np.asarray(deliver["sigma"]) * 100, [0.98, 6.08, 10.69], atol=1e-6)
    assert deliver["adapt"]["d"] >= deliver["adapt"]["d_seed"] - deliver["adapt"]["e_omega"]


def test_deterministic_export(tmp_path):
    cfg = load_scenario("kinova_bright_far")
    a = run_scenario(cfg)
    b = run_scenario(cfg)
    pa = a.write(tmp_path / "a")
    pb = b.write(tmp_path / "b")
    for x, y in zip(pa, pb):
        assert x.read_bytes() == y.read_bytes()


def test_write_layout(tmp_path):
    log, _ = bundled_run("kinova_bright_near")
    csv_path, summary_path = log.write(tmp_path)
    header = csv_path.read_text().splitlines()[0].split(",")
    assert header[:9] == ["t", "stage", "goal_id", "d", "d_raw", "intervened", "clamps", "track_err", "frame_t"]
    assert header[-3:] == ["ee_x", "ee_y", "ee_z"]
    assert len(csv_path.read_text().splitlines()) == len(log) + 1
    summary = json.loads(summary_path.read_text())
    assert summary["complete"] and summary["margin_respected"]


def test_compare_identical_and_different(static_config):
    log, _ = bundled_run("kinova_bright_near")
    same = compare_runs(log, log)
    assert same.identical
    assert same.min_distance_gap == 0.0
    assert all(v == 0.0 for v in same.stage_duration_deltas.values())
    other = run_scenario(static_config)
    report = compare_runs(log, other)
    assert report.incomparable_stages
    assert "Reach" in report.incomparable_stages
    assert not report.identical
    json.dumps(report.to_dict())


def test_compare_two_pipelines():
    a, _ = bundled_run("kinova_bright_near")
    b, _ = bundled_run("fanuc_bright_near")
    report = compare_runs(a, b)
    assert report.both_safe
    assert not report.incomparable_stages
    assert set(report.stage_duration_deltas) == set(FULL_TIMELINE)


def test_incomplete_run_is_flagged():
    cfg = load_scenario("kinova_bright_near")
    bad = replace(cfg, object_pose=Pose([3.0, 0.0, 0.0], [1, 0, 0, 0]))
    log = run_scenario(bad)
    assert not log.complete
    assert log.error.startswith("IKFailed")
    assert len(log) > 0
    with pytest.raises(IncompleteLog):
        compare_runs(log, log)


def scenario_dict():
    from conftest import DATA
    return json.loads((DATA / "scenarios" / "kinova_bright_near.json").read_text()), DATA / "scenarios"


def test_config_validation_errors(tmp_path):
    data, base = scenario_dict()
    ScenarioConfig.from_dict(data, base).validate()
    with pytest.raises(ConfigError, match="safety rate"):
        ScenarioConfig.from_dict({**data, "rates": {"command": 30, "safety": 10}}, base).validate()
    with pytest.raises(ConfigError, match="integer multiple"):
        ScenarioConfig.from_dict({**data, "rates": {"command": 30, "safety": 45}}, base).validate()
    with pytest.raises(ConfigError, match="skeleton file not found"):
        ScenarioConfig.from_dict({**data, "skeleton": "nowhere.jsonl"}, base).validate()
    with pytest.raises(ConfigError, match="unknown scenario keys"):
        ScenarioConfig.from_dict({**data, "colour": "red"}, base)
    with pytest.raises(ConfigError, match="pipeline"):
        ScenarioConfig.from_dict({**data, "pipeline": "teleport"}, base).validate()
    with pytest.raises(ConfigError, match="non-decreasing"):
        ScenarioConfig.from_dict({**data, "events": [{"kind": "HumanRequests", "t": 2},
                                                     {"kind": "ObjectGrasped", "t": 1}]}, base).validate()
    with pytest.raises(ConfigError, match="scenario not found"):
        ScenarioConfig.load(tmp_path / "missing.json")


def test_default_rates():
    fanuc = load_scenario("fanuc_bright_near")
    kinova = load_scenario("kinova_bright_near")
    assert (fanuc.command_rate, fanuc.safety_rate, fanuc.perception_rate) == (125, 1000, 30)
    assert (kinova.command_rate, kinova.safety_rate, kinova.perception_rate) == (30, 120, 30)
