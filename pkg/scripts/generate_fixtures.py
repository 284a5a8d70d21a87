"""Regenerate the bundled skeleton, obstacle and scenario fixtures.

Skeletons: 30 Hz, 10 s. The right hand rises between 0.5 s and 2.5 s and
is then held. Every keypoint carries a noise pattern that repeats every 10
frames with zero mean and unit sample standard deviation per period,
scaled per axis, so any 10 consecutive stationary frames reproduce the
per-axis standard deviation exactly and average to the true position.
"""

import json
from pathlib import Path

import numpy as np

from safehandover.geometry import Capsule, CapsuleSet, min_distance
from safehandover.kinematics import Pose, forward_kinematics, inverse_kinematics, jacobian, load_model

DATA = Path(__file__).resolve().parents[1] / "src" / "safehandover" / "data"
RATE = 30.0
N_FRAMES = 300
SIGMA_CM = {"bright": (0.10, 0.40, 0.75), "dark": (0.98, 6.08, 10.69)}
HUMAN_X = {"near": 1.0, "far": 1.1}
PATTERN = np.array([-1.5, 1.2, -0.3, 0.8, -1.1, 0.4, 1.6, -0.9, 0.2, -0.4])
PATTERN = (PATTERN - PATTERN.mean()) / PATTERN.std(ddof=1)
KEYPOINT_ORDER = ("right_wrist", "left_wrist", "right_elbow", "left_elbow", "right_shoulder",
                  "left_shoulder", "head", "pelvis", "neck")


def posture(X: float, s: float) -> dict[str, np.ndarray]:
    """Standing human facing -x at depth ``X``; ``s`` in [0, 1] raises the right hand."""
    k = {
        "pelvis": [X, 0.0, 0.05], "neck": [X, 0.0, 0.50], "head": [X, 0.0, 0.70],
        "right_shoulder": [X, 0.18, 0.45], "left_shoulder": [X, -0.18, 0.45],
        "left_elbow": [X, -0.20, 0.17], "left_wrist": [X, -0.22, -0.08],
    }
    down_e, up_e = np.array([X, 0.20, 0.17]), np.array([X - 0.14, 0.24, 0.20])
    down_w, up_w = np.array([X, 0.22, -0.08]), np.array([X - 0.40, 0.16, 0.22])
    k["right_elbow"] = down_e + s * (up_e - down_e)
    k["right_wrist"] = down_w + s * (up_w - down_w)
    return {name: np.asarray(v, dtype=float) for name, v in k.items()}


def raise_profile(t: float) -> float:
    x = min(max((t - 0.5) / 2.0, 0.0), 1.0)
    return x * x * (3 - 2 * x)


def skeleton(X: float, sigma_m) -> list[dict]:
    out = []
    for i in range(N_FRAMES):
        t = i / RATE
        kps = posture(X, raise_profile(t))
        rec = {}
        for j, name in enumerate(KEYPOINT_ORDER):
            noise = [sigma_m[a] * PATTERN[(i + j + 3 * a) % 10] for a in range(3)]
            rec[name] = (kps[name] + np.array(noise)).tolist()
        out.append({"t": t, "keypoints": rec})
    return out


def write_jsonl(path: Path, frames: list[dict]) -> None:
    with path.open("w") as fh:
        for f in frames:
            fh.write(json.dumps(f) + "\n")


def elbow_obstacle() -> dict:
    """Obstacle 5 cm from the elbow of the 7-dof model, on the far side of its self-motion direction."""
    m = load_model("kinova-gen3-like")
    quat = forward_kinematics(m, m.home_q)[0].quat
    goal = Pose(np.array([0.45, -0.10, 0.20]), quat)
    q = inverse_kinematics(m, goal, m.home_q)
    _, fr = forward_kinematics(m, q)
    n = np.linalg.svd(jacobian(m, q))[2][-1]
    _, fr2 = forward_kinematics(m, q + 1e-6 * n)
    v = fr2[4][:3, 3] - fr[4][:3, 3]
    v /= np.linalg.norm(v)
    axis = np.cross(v, [0.0, 0.0, 1.0])
    axis /= np.linalg.norm(axis)
    elbow = fr[4][:3, 3]
    radius = 0.05

    def env(s):
        c = elbow - s * v
        return CapsuleSet([Capsule(c - 0.1 * axis, c + 0.1 * axis, radius)], ["obstacle"])

    s = 0.20
    for _ in range(50):
        s += 0.05 - min_distance(m, q, env(s)).d
    caps = env(s).to_dict()
    return {"robot": m.name, "goal": {"p": goal.p.tolist(), "quat": goal.quat.tolist()}, **caps}


ROBOTS = {
    "fanuc": {
        "robot": "fanuc-lrmate-200id7l-like", "pipeline": "preplanned-jerk",
        "object_quat": [0.0, 1.0, 0.0, 0.0],
        "delivery": {"keypoint": "right_wrist", "offset": [-0.05, 0.0, 0.34], "quat": [0.0, 1.0, 0.0, 0.0]},
    },
    "kinova": {
        "robot": "kinova-gen3-like", "pipeline": "feedback-accel",
        "object_quat": [0.0, 0.0, 1.0, 0.0],
        "delivery": {"keypoint": "right_wrist", "offset": [-0.05, 0.0, 0.30],
                     "quat": [float(np.cos(np.pi / 4)), 0.0, float(np.sin(np.pi / 4)), 0.0]},
    },
}
EVENTS = [("HumanRequests", 1.0), ("ObjectGrasped", 4.0), ("HumanTookObject", 9.0),
          ("HumanReturnedObject", 11.0), ("ObjectPlaced", 14.0), ("AtHome", 17.0)]


def scenario(robot: str, light: str, dist: str) -> dict:
    r = ROBOTS[robot]
    return {
        "name": f"{robot}_{light}_{dist}",
        "robot": r["robot"],
        "pipeline": r["pipeline"],
        "skeleton": f"../skeletons/{light}_{dist}.jsonl",
        "events": [{"kind": k, "t": t} for k, t in EVENTS],
        "return_object": True,
        "safety": {"d_min": 0.10, "k_v": 1.0, "k_a": 0.2, "eta": 5.0},
        "goal_adaptation": {"scale": [1.0, 1.0, 1.0], "u_safe": (np.array([-1.0, 0.0, 1.0]) / np.sqrt(2)).tolist()},
        "adaptation": {"step": 0.05, "orientation_weight": 1.0, "max_iters": 300},
        "poses": {"object": {"p": [0.30, -0.30, 0.10], "quat": r["object_quat"]}},
        "delivery": r["delivery"],
        "object": {"length": 0.10, "radius": 0.03},
        "window": 10,
        "duration": 22.0,
        "rng_seed": 0,
    }


def main():
    for sub in ("skeletons", "envs", "scenarios"):
        (DATA / sub).mkdir(parents=True, exist_ok=True)
    for light, cm in SIGMA_CM.items():
        for dist, X in HUMAN_X.items():
            write_jsonl(DATA / "skeletons" / f"{light}_{dist}.jsonl", skeleton(X, np.array(cm) / 100.0))
    write_jsonl(DATA / "skeletons" / "static_near.jsonl", skeleton(HUMAN_X["near"], np.zeros(3)))
    (DATA / "envs" / "elbow_obstacle.json").write_text(json.dumps(elbow_obstacle(), indent=2) + "\n")
    for robot in ROBOTS:
        for light in SIGMA_CM:
            for dist in HUMAN_X:
                sc = scenario(robot, light, dist)
                (DATA / "scenarios" / f"{sc['name']}.json").write_text(json.dumps(sc, indent=2) + "\n")


if __name__ == "__main__":
    main()
