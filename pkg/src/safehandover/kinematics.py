"""Serial-arm kinematics.

Revolute arms described by modified Denavit-Hartenberg tables (Craig's
convention): ``T(i-1 -> i) = RotX(alpha) TransX(a) RotZ(theta + offset) TransZ(d)``.

Frame indices used throughout the package:

* ``0`` - robot base (world),
* ``1 .. dof`` - the frame carried by joint ``i``,
* ``dof + 1`` - tool centre point (flange frame composed with the tool transform).

Collision capsules are attached to any of these frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from . import _kernels

RANK_RTOL = 1e-8

IK_DAMPING = 1e-3
IK_STEP_CLAMP = 0.2
IK_MAX_ITERS = 200
IK_TOL = 1e-9


class KinematicsError(Exception):
    pass


class DimensionError(KinematicsError, ValueError):
    pass


class NoConvergence(KinematicsError):
    """Raised when an iterative solver stops short of its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class Joint:
    alpha: float
    a: float
    d: float
    theta_offset: float = 0.0
    lower: float = -np.pi
    upper: float = np.pi
    v_max: float = 1.0
    a_max: float = 2.0
    j_max: float = 10.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"joint lower limit {self.lower} must be below upper {self.upper}")
        for name in ("v_max", "a_max", "j_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"joint {name} must be strictly positive")


@dataclass(frozen=True)
class LinkCapsule:
    """Capsule template expressed in the frame of ``link``."""

    link: int
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True, eq=False)
class Pose:
    """End-effector position (m) and unit quaternion orientation ``(w, x, y, z)``."""

    p: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        quat = np.asarray(self.quat, dtype=float).reshape(4)
        norm = np.linalg.norm(quat)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} is not 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "quat", quat)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    @property
    def rotation(self) -> np.ndarray:
        return matrix_from_quat(self.quat)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.p
        return T


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    # canonical hemisphere keeps round trips deterministic
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def matrix_from_quat(quat: np.ndarray) -> np.ndarray:
    w, x, y, z = quat
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def rotation_error(R_target: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Rotation vector (world frame) taking ``R`` onto ``R_target``."""
    return Rotation.from_matrix(R_target @ R.T).as_rotvec()


def rotation_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Angle (rad) of the relative rotation ``R1^T R2``; same value as :func:`quat_angle`."""
    R = R1.T @ R2
    s = np.hypot(np.hypot(R[2, 1] - R[1, 2], R[0, 2] - R[2, 0]), R[1, 0] - R[0, 1])
    return float(np.arctan2(s, R[0, 0] + R[1, 1] + R[2, 2] - 1.0))


def quat_angle(q1: np.ndarray, q2: np.ndarray) -> float:
    """Angle (rad) of the relative rotation between two unit quaternions."""
    c = abs(float(np.dot(q1, q2)))
    return 2.0 * float(np.arccos(min(1.0, c)))


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    joints: tuple[Joint, ...]
    link_capsules: tuple[LinkCapsule, ...] = ()
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    home: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("a robot needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "link_capsules", tuple(self.link_capsules))
        object.__setattr__(self, "tool", np.ascontiguousarray(np.asarray(self.tool, dtype=float).reshape(4, 4)))
        for cap in self.link_capsules:
            if not 0 <= cap.link <= self.dof + 1:
                raise ValueError(f"capsule attached to unknown frame {cap.link}")
        if self.home is not None:
            if len(self.home) != self.dof:
                raise DimensionError("home configuration has wrong length")
            object.__setattr__(self, "home", tuple(float(v) for v in self.home))
        params = np.array([[j.alpha, j.a, j.d, j.theta_offset] for j in self.joints])
        object.__setattr__(self, "_params", params)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def v_max(self) -> np.ndarray:
        return np.array([j.v_max for j in self.joints])

    @property
    def a_max(self) -> np.ndarray:
        return np.array([j.a_max for j in self.joints])

    @property
    def j_max(self) -> np.ndarray:
        return np.array([j.j_max for j in self.joints])

    @property
    def home_q(self) -> np.ndarray:
        return np.zeros(self.dof) if self.home is None else np.array(self.home)

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def with_capsule(self, capsule: LinkCapsule) -> "RobotModel":
        """Copy of the model with one more capsule (e.g. a carried object)."""
        return replace(self, link_capsules=self.link_capsules + (capsule,))

    def check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.dof:
            raise DimensionError(f"{self.name}: expected {self.dof} joint values, got {q.shape[-1]}")
        return q


# --------------------------------------------------------------------------- FK


def frames_batch(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """All frames for a batch of configurations, shape ``(B, dof + 2, 4, 4)``."""
    Q = np.ascontiguousarray(np.atleast_2d(model.check(Q)), dtype=float)
    return _kernels.fk_frames(model._params, model.tool, Q)


def forward_kinematics(model: RobotModel, q) -> tuple[Pose, np.ndarray]:
    """End-effector pose and every frame (``(dof + 2, 4, 4)``) at ``q``."""
    q = model.check(q)
    if q.ndim != 1:
        raise DimensionError("forward_kinematics takes a single configuration")
    frames = frames_batch(model, q[None])[0]
    return Pose.from_matrix(frames[-1]), frames


def fk_position(model: RobotModel, q) -> np.ndarray:
    return frames_batch(model, np.asarray(q, dtype=float)[None])[0, -1, :3, 3]


def jacobian_from_frames(frames: np.ndarray) -> np.ndarray:
    """Geometric Jacobian(s) from frames; works on ``(..., dof + 2, 4, 4)``."""
    if frames.ndim == 3:
        return _kernels.jacobian(np.ascontiguousarray(frames))
    z = frames[..., 1:-1, :3, 2]
    o = frames[..., 1:-1, :3, 3]
    p = frames[..., -1:, :3, 3]
    lin = np.cross(z, p - o)
    return np.concatenate([np.swapaxes(lin, -1, -2), np.swapaxes(z, -1, -2)], axis=-2)


def jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x dof Jacobian: linear velocity rows then angular velocity rows (world frame)."""
    q = model.check(q)
    if q.ndim != 1:
        raise DimensionError("jacobian takes a single configuration")
    return jacobian_from_frames(frames_batch(model, q[None])[0])


def position_null_space(model: RobotModel, q) -> np.ndarray:
    """Orthonormal basis (rows, shape ``(k, dof)``) of the position-Jacobian null space."""
    Jp = jacobian(model, q)[:3]
    _, s, vt = np.linalg.svd(Jp, full_matrices=True)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return vt[rank:].copy()


# --------------------------------------------------------------------------- IK


def _dls_step(J: np.ndarray, err: np.ndarray, damping: float, adaptive: bool = False) -> np.ndarray:
    JJt = J @ J.T
    if adaptive:
        # error-scaled damping: stable far from the goal, near-Newton close to it
        e = float(np.linalg.norm(err))
        JJt[np.diag_indices_from(JJt)] += damping**2 * min(1.0, e) + 0.5 * e * e
    else:
        JJt[np.diag_indices_from(JJt)] += damping**2
    return J.T @ np.linalg.solve(JJt, err)


def _clamp_step(dq: np.ndarray, limit: float) -> np.ndarray:
    m = np.max(np.abs(dq))
    return dq * (limit / m) if m > limit else dq


def inverse_kinematics(
    model: RobotModel,
    target: Pose,
    q_seed,
    *,
    damping: float = IK_DAMPING,
    step_clamp: float = IK_STEP_CLAMP,
    max_iters: int = IK_MAX_ITERS,
    tol: float = IK_TOL,
) -> np.ndarray:
    """Damped least-squares IK for a full 6-D pose, clamped to joint limits.

    The damping term is ``damping**2 * min(1, |e|) + |e|**2 / 2`` so steps
    stay bounded near singular wrists and convergence stays fast at the end.
    """
    q = np.clip(model.check(q_seed).astype(float), model.lower, model.upper)
    R_t = target.rotation
    err_norm = np.inf
    for _ in range(max_iters + 1):
        frames = frames_batch(model, q[None])[0]
        T = frames[-1]
        e_p = target.p - T[:3, 3]
        e_w = rotation_error(R_t, T[:3, :3])
        if np.linalg.norm(e_p) <= tol and np.linalg.norm(e_w) <= tol:
            return q
        err_norm = float(np.hypot(np.linalg.norm(e_p), np.linalg.norm(e_w)))
        J = jacobian_from_frames(frames)
        dq = _clamp_step(_dls_step(J, np.concatenate([e_p, e_w]), damping, adaptive=True), step_clamp)
        q = np.clip(q + dq, model.lower, model.upper)
    raise NoConvergence(f"IK for {model.name} did not converge", err_norm)


def icop_correct(
    model: RobotModel,
    q,
    p_goal,
    *,
    damping: float = IK_DAMPING,
    step_clamp: float = IK_STEP_CLAMP,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> np.ndarray:
    """Pull ``q`` back onto the end-effector position ``p_goal``.

    Position-only damped least squares started at ``q``; every step is the
    minimum-norm joint correction for the current residual, so the result
    stays close to ``q``. Joint limits are not enforced here.
    """
    q = model.check(q).astype(float).copy()
    p_goal = np.asarray(p_goal, dtype=float)
    err = np.inf
    for _ in range(max_iters + 1):
        frames = frames_batch(model, q[None])[0]
        e_p = p_goal - frames[-1, :3, 3]
        err = float(np.linalg.norm(e_p))
        if err <= tol:
            return q
        Jp = jacobian_from_frames(frames)[:3]
        q = q + _clamp_step(_dls_step(Jp, e_p, damping), step_clamp)
    raise NoConvergence("position correction did not converge", err)


# --------------------------------------------------------------------------- models


def planar_arm(lengths: Sequence[float], radius: float = 0.05, name: str | None = None) -> RobotModel:
    """Planar arm rotating about world z; link ``i`` has length ``lengths[i]``."""
    joints = []
    prev = 0.0
    for L in lengths:
        joints.append(Joint(alpha=0.0, a=prev, d=0.0, lower=-2 * np.pi, upper=2 * np.pi,
                            v_max=2.0, a_max=5.0, j_max=20.0))
        prev = float(L)
    tool = np.eye(4)
    tool[0, 3] = prev
    caps = [LinkCapsule(i + 1, (0.0, 0.0, 0.0), (float(L), 0.0, 0.0), radius) for i, L in enumerate(lengths)]
    return RobotModel(name or f"planar-{len(lengths)}", tuple(joints), tuple(caps), tool)


def model_from_dict(data: dict) -> RobotModel:
    joints = []
    for j in data["joints"]:
        lim = j["limits"]
        joints.append(Joint(
            alpha=float(j["alpha"]), a=float(j["a"]), d=float(j["d"]),
            theta_offset=float(j.get("theta_offset", 0.0)),
            lower=float(lim["lower"]), upper=float(lim["upper"]),
            v_max=float(lim["velocity"]), a_max=float(lim["acceleration"]), j_max=float(lim["jerk"]),
        ))
    tool = np.eye(4)
    if "tool" in data:
        tool[:3, 3] = data["tool"].get("xyz", [0.0, 0.0, 0.0])
        if "quat" in data["tool"]:
            tool[:3, :3] = matrix_from_quat(np.asarray(data["tool"]["quat"], dtype=float))
    caps = [LinkCapsule(int(c["link"]), tuple(c["a"]), tuple(c["b"]), float(c["radius"]))
            for c in data.get("capsules", [])]
    return RobotModel(data["name"], tuple(joints), tuple(caps), tool, data.get("home"))


def bundled_models() -> list[str]:
    root = resources.files("safehandover") / "data" / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_model(name_or_path: str | Path) -> RobotModel:
    """Load a bundled model by id or a model file by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        res = resources.files("safehandover") / "data" / "models" / f"{name_or_path}.json"
        if not res.is_file():
            raise KeyError(f"unknown robot model {name_or_path!r}; bundled: {', '.join(bundled_models())}")
        text = res.read_text()
    return model_from_dict(json.loads(text))
