import json

import numpy as np
import pytest

from conftest import DATA
from safehandover.adaptation import AdaptParams, IKFailed, objective, search_direction, user_adapt
from safehandover.geometry import Capsule, CapsuleSet, min_distance
from safehandover.kinematics import (
    Joint,
    LinkCapsule,
    Pose,
    RobotModel,
    fk_position,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
    load_model,
    position_null_space,
)


def elbow_fixture():
    data = json.loads((DATA / "envs" / "elbow_obstacle.json").read_text())
    model = load_model(data["robot"])
    return model, Pose(data["goal"]["p"], data["goal"]["quat"]), CapsuleSet.from_dict(data)


def spatial_three_dof():
    joints = (Joint(0.0, 0.0, 0.3), Joint(np.pi / 2, 0.0, 0.0), Joint(0.0, 0.4, 0.0))
    tool = np.eye(4)
    tool[0, 3] = 0.35
    caps = (LinkCapsule(3, (0, 0, 0), (0.4, 0, 0), 0.04),)
    return RobotModel("spatial-3", joints, caps, tool, (0.1, 0.6, -0.9))


@pytest.fixture(scope="module")
def elbow_result():
    model, x_G, env = elbow_fixture()
    return model, x_G, env, user_adapt(model, x_G, env)


def test_objective_self_comparison():
    model, x_G, env = elbow_fixture()
    q_G = inverse_kinematics(model, x_G, model.home_q)
    V, d, e = objective(model, q_G, env, q_G, 1.0)
    assert e == 0.0
    assert V == -d == -min_distance(model, q_G, env).d


def test_objective_distance_dominance_and_zero_weight():
    model, x_G, env = elbow_fixture()
    q_G = inverse_kinematics(model, x_G, model.home_q)
    q = q_G + 0.1
    far = CapsuleSet([c.translated([10.0, 0, 0]) for c in env], env.labels)
    V_near, _, e = objective(model, q, env, q_G, 1.0)
    V_far, _, _ = objective(model, q, far, q_G, 1.0)
    assert e > 0
    assert V_near - V_far == pytest.approx(10.0, abs=0.5)
    V0, d0, _ = objective(model, q, env, q_G, 0.0)
    assert V0 == -d0


def test_elbow_fixture_improves_clearance(elbow_result):
    model, x_G, env, res = elbow_result
    assert res.d_seed == pytest.approx(0.05, abs=1e-6)
    assert res.d > res.d_seed
    assert np.linalg.norm(fk_position(model, res.q_g) - x_G.p) <= 1e-6
    assert model.within_limits(res.q_g)
    assert res.V <= res.V_seed
    assert res.V == pytest.approx(-res.d + 1.0 * res.e_omega, abs=1e-9)
    V, d, e = objective(model, res.q_g, env, res.q_G, 1.0)
    assert (V, d, e) == pytest.approx((res.V, res.d, res.e_omega), abs=1e-9)
    assert res.iters_used == 300
    assert np.all(np.diff(res.best_history) <= 0)


def test_deterministic_given_seed(elbow_result):
    model, x_G, env, res = elbow_result
    again = user_adapt(model, x_G, env)
    assert np.array_equal(again.q_g, res.q_g)
    other = user_adapt(model, x_G, env, AdaptParams(rng_seed=5))
    assert not np.array_equal(other.q_g, res.q_g)
    assert other.d > other.d_seed


def test_three_dof_has_no_null_space():
    arm = spatial_three_dof()
    q = np.array(arm.home)
    assert np.linalg.matrix_rank(jacobian(arm, q)[:3]) == 3
    x_G = forward_kinematics(arm, q)[0]
    env = CapsuleSet([Capsule([0.3, 0.3, 0.3], [0.3, 0.3, 0.3], 0.05)])
    res = user_adapt(arm, x_G, env, q_seed=q)
    assert res.flag == "no_null_space"
    assert np.array_equal(res.q_g, res.q_G)


def test_empty_env_returns_seed():
    model, x_G, _ = elbow_fixture()
    res = user_adapt(model, x_G, CapsuleSet())
    assert res.flag == "no_obstacles"
    assert np.array_equal(res.q_g, res.q_G)


def test_far_env_flat_objective():
    model, x_G, env = elbow_fixture()
    far = CapsuleSet([Capsule([3.0, 3.0, 0.0], [3.0, 3.2, 0.0], 0.05)])
    q_G = inverse_kinematics(model, x_G, model.home_q)
    assert min_distance(model, q_G, far).d >= 2.0
    res = user_adapt(model, x_G, far)
    assert res.V_seed - res.V <= 1.0 * 0.1


def test_unreachable_goal_raises():
    model, _, env = elbow_fixture()
    with pytest.raises(IKFailed):
        user_adapt(model, Pose([3.0, 0, 0], [1, 0, 0, 0]), env)


def test_search_direction_in_null_space():
    model, x_G, _ = elbow_fixture()
    q = inverse_kinematics(model, x_G, model.home_q)
    rng = np.random.default_rng(0)
    Jp = jacobian(model, q)[:3]
    for w in (0.0, 1.0):
        dq = search_direction(model, q, rng, w)
        assert np.linalg.norm(dq) == pytest.approx(1.0)
        assert np.linalg.norm(Jp @ dq) <= 1e-9
        B = position_null_space(model, q)
        assert np.linalg.norm(B.T @ (B @ dq) - dq) <= 1e-9


def test_params_validation():
    with pytest.raises(ValueError):
        AdaptParams(step=0)
    with pytest.raises(ValueError):
        AdaptParams(orientation_weight=-1)
    with pytest.raises(ValueError):
        AdaptParams(max_iters=0)


def test_six_dof_model_adapts():
    model = load_model("fanuc-lrmate-200id7l-like")
    x_G = Pose([0.45, 0.0, 0.30], [0, 1, 0, 0])
    env = CapsuleSet([Capsule([0.30, -0.3, 0.5], [0.30, 0.3, 0.5], 0.05)])
    res = user_adapt(model, x_G, env)
    assert res.V <= res.V_seed
    assert np.linalg.norm(fk_position(model, res.q_g) - x_G.p) <= 1e-6
