import json
import math

import numpy as np
import pytest

from conftest import skeleton_path
from safehandover.kinematics import Pose
from safehandover.perception import (
    DeliverySpec,
    EmptyTrajectory,
    GoalAdaptParams,
    InsufficientFrames,
    MissingKeypoint,
    ParseError,
    SkeletonFrame,
    UncertaintyEstimate,
    adapt_goal,
    dump_skeleton_trajectory,
    human_capsules,
    keypoint_stats,
    load_skeleton_trajectory,
    mean_frame,
    nominal_goal,
    parse_skeleton_lines,
)

DARK_CM = (0.98, 6.08, 10.69)
BRIGHT_CM = (0.10, 0.40, 0.75)
U_YZ = np.array([0.0, 1 / math.sqrt(2), 1 / math.sqrt(2)])


def frame(t, **kps):
    return SkeletonFrame(t, {k: np.asarray(v, dtype=float) for k, v in kps.items()})


def t_pose(t=0.0):
    return frame(
        t, pelvis=[1, 0, 0], neck=[1, 0, 0.5], head=[1, 0, 0.7],
        right_shoulder=[1, 0.2, 0.45], left_shoulder=[1, -0.2, 0.45],
        right_elbow=[1, 0.5, 0.45], left_elbow=[1, -0.5, 0.45],
        right_wrist=[1, 0.8, 0.45], left_wrist=[1, -0.8, 0.45],
    )


def test_bundled_fixture_length_and_rate():
    frames = load_skeleton_trajectory(skeleton_path("bright_near"))
    assert len(frames) == 300
    assert np.allclose(np.diff([f.t for f in frames]), 1 / 30)


def test_shuffled_timestamps_sorted():
    lines = [json.dumps({"t": t, "keypoints": {"head": [0, 0, t]}}) for t in (0.2, 0.0, 0.1)]
    frames = parse_skeleton_lines(lines)
    assert [f.t for f in frames] == [0.0, 0.1, 0.2]
    assert frames[0].confidence == {"head": 1.0}


def test_empty_and_malformed(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(EmptyTrajectory):
        load_skeleton_trajectory(empty)
    with pytest.raises(ParseError, match=":2:"):
        parse_skeleton_lines(['{"t": 0, "keypoints": {}}', '{"t": "x"'])
    with pytest.raises(ParseError):
        parse_skeleton_lines(['{"t": 0, "keypoints": {"head": [0, 0]}}'])


def test_dump_round_trip(tmp_path):
    frames = [t_pose(0.0), t_pose(0.1)]
    dump_skeleton_trajectory(frames, tmp_path / "s.jsonl")
    back = load_skeleton_trajectory(tmp_path / "s.jsonl")
    assert np.array_equal(back[1].keypoints["right_wrist"], frames[1].keypoints["right_wrist"])


def test_constant_keypoint_zero_sigma():
    frames = [frame(i / 30, right_wrist=[0.5, 0.2, 0.3]) for i in range(10)]
    unc, mean = keypoint_stats(frames, "right_wrist")
    assert np.array_equal(unc.sigma, np.zeros(3))
    assert np.allclose(mean, [0.5, 0.2, 0.3])


def test_gaussian_noise_estimate():
    rng = np.random.default_rng(11)
    pts = rng.normal(0, 0.01, (10_000, 3))
    frames = [frame(i, right_wrist=p) for i, p in enumerate(pts)]
    unc, _ = keypoint_stats(frames, "right_wrist", window=10_000)
    assert np.all(np.abs(unc.sigma / 0.01 - 1) < 0.05)


def test_sample_deviation_uses_n_minus_one():
    frames = [frame(i, right_wrist=[v, 0, 0]) for i, v in enumerate([0.0, 1.0])]
    unc, _ = keypoint_stats(frames, "right_wrist", window=2)
    assert unc.sigma[0] == pytest.approx(math.sqrt(0.5))


@pytest.mark.parametrize("name, cm", [("dark_near", DARK_CM), ("bright_far", BRIGHT_CM), ("dark_far", DARK_CM)])
def test_fixture_reproduces_table_values(name, cm):
    unc, _ = keypoint_stats(load_skeleton_trajectory(skeleton_path(name)), "right_wrist", 10)
    assert np.allclose(unc.sigma * 100, cm, atol=1e-6, rtol=0)


def test_static_fixture_is_noise_free():
    unc, _ = keypoint_stats(load_skeleton_trajectory(skeleton_path("static_near")), "right_wrist", 10)
    assert np.all(unc.sigma == 0)


def test_window_permutation_invariant():
    rng = np.random.default_rng(12)
    frames = [frame(i, right_wrist=rng.normal(size=3)) for i in range(10)]
    a, _ = keypoint_stats(frames, "right_wrist")
    b, _ = keypoint_stats([frames[i] for i in rng.permutation(10)], "right_wrist")
    assert np.allclose(a.sigma, b.sigma, rtol=1e-12)


def test_insufficient_frames():
    frames = [frame(0, right_wrist=[0, 0, 0])]
    with pytest.raises(InsufficientFrames):
        keypoint_stats(frames, "right_wrist")
    with pytest.raises(InsufficientFrames):
        keypoint_stats(frames * 5, "right_wrist", window=1)


def test_mean_frame_window():
    frames = [frame(i, head=[i, 0, 0]) for i in range(20)]
    m = mean_frame(frames, 10)
    assert m.t == 19
    assert np.allclose(m.keypoints["head"], [14.5, 0, 0])


def test_nominal_goal_offsets():
    f = frame(0, right_wrist=[0.5, 0.2, 0.3])
    assert np.array_equal(nominal_goal(f).p, [0.5, 0.2, 0.3])
    g = nominal_goal(f, DeliverySpec(offset=[0, 0, 0.05]))
    assert np.allclose(g.p, [0.5, 0.2, 0.35])
    missing = SkeletonFrame(0, {"right_wrist": np.zeros(3)}, {"right_wrist": 0.0})
    with pytest.raises(MissingKeypoint):
        nominal_goal(missing)


def test_zero_sigma_identity():
    x = Pose([0.41, -0.13, 0.27], [0, 1, 0, 0])
    out = adapt_goal(x, UncertaintyEstimate(np.zeros(3), 10, "right_wrist"), GoalAdaptParams([2, 3, 4], U_YZ))
    assert np.array_equal(out.p, x.p)
    assert np.array_equal(out.quat, x.quat)


def test_dark_offset_hand_computed():
    unc = UncertaintyEstimate(np.array(DARK_CM) / 100, 10, "right_wrist")
    out = adapt_goal(Pose([0, 0, 0], [1, 0, 0, 0]), unc, GoalAdaptParams([1, 1, 1], U_YZ))
    assert np.allclose(out.p * 100, [0.0, 4.2993, 7.5589], atol=1e-4)
    assert np.allclose(out.p, [0.0, 0.0608 / math.sqrt(2), 0.1069 / math.sqrt(2)], atol=1e-12)


def test_bright_offset_smaller_than_dark():
    params = GoalAdaptParams([1, 1, 1], U_YZ)
    x = Pose([0, 0, 0], [1, 0, 0, 0])
    bright = adapt_goal(x, UncertaintyEstimate(np.array(BRIGHT_CM) / 100, 10, "right_wrist"), params)
    dark = adapt_goal(x, UncertaintyEstimate(np.array(DARK_CM) / 100, 10, "right_wrist"), params)
    assert np.linalg.norm(bright.p) * 100 == pytest.approx(0.601, abs=5e-4)
    assert np.linalg.norm(bright.p) < np.linalg.norm(dark.p)


def test_offset_monotone_in_sigma():
    params = GoalAdaptParams([1, 1, 1], U_YZ)
    hand = np.array([0.5, 0.0, 0.3])
    x = Pose(hand, [1, 0, 0, 0])
    prev = 0.0
    for s in np.linspace(0, 0.2, 11):
        out = adapt_goal(x, UncertaintyEstimate(np.array([s, s, s]), 10, "right_wrist"), params)
        dist = np.linalg.norm(out.p - hand)
        assert dist >= prev
        prev = dist


def test_goal_params_validation():
    with pytest.raises(ValueError):
        GoalAdaptParams([1, 1, 1], [1, 1, 0])
    with pytest.raises(ValueError):
        GoalAdaptParams([-1, 1, 1], [0, 0, 1])


def test_human_capsules_t_pose():
    caps = human_capsules(t_pose())
    assert len(caps) == 9
    for label in ("right_upper_arm", "left_upper_arm", "right_forearm", "left_forearm"):
        c = caps.capsules[caps.labels.index(label)]
        assert c.a[2] == pytest.approx(c.b[2])
    assert human_capsules(t_pose()) == caps


def test_human_capsules_missing_pelvis():
    f = t_pose()
    del f.keypoints["pelvis"]
    with pytest.raises(MissingKeypoint):
        human_capsules(f)
