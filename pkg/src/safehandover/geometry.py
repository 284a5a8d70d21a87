"""Capsules and robot-to-environment clearance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .kinematics import RobotModel, frames_batch

GRADIENT_STEP = 1e-6
_EPS = 1e-15


@dataclass(frozen=True, eq=False)
class Capsule:
    """Segment ``a``-``b`` swept by a sphere of radius ``r`` (``a == b`` is a sphere)."""

    a: np.ndarray
    b: np.ndarray
    r: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(3)
        b = np.asarray(self.b, dtype=float).reshape(3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("capsule endpoints must be finite")
        if not self.r > 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "r", float(self.r))

    def translated(self, offset) -> "Capsule":
        offset = np.asarray(offset, dtype=float)
        return Capsule(self.a + offset, self.b + offset, self.r)


class CapsuleSet:
    """Ordered capsules with one label each (body part name or link id)."""

    def __init__(self, capsules: Iterable[Capsule] = (), labels: Sequence[str] | None = None):
        self.capsules = tuple(capsules)
        if labels is None:
            labels = [str(i) for i in range(len(self.capsules))]
        if len(labels) != len(self.capsules):
            raise ValueError("one label per capsule is required")
        self.labels = tuple(labels)
        n = len(self.capsules)
        self.A = np.array([c.a for c in self.capsules]).reshape(n, 3)
        self.B = np.array([c.b for c in self.capsules]).reshape(n, 3)
        self.R = np.array([c.r for c in self.capsules]).reshape(n)

    def __len__(self) -> int:
        return len(self.capsules)

    def __iter__(self):
        return iter(self.capsules)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CapsuleSet):
            return NotImplemented
        return (self.labels == other.labels and np.array_equal(self.A, other.A)
                and np.array_equal(self.B, other.B) and np.array_equal(self.R, other.R))

    def __add__(self, other: "CapsuleSet") -> "CapsuleSet":
        return CapsuleSet(self.capsules + other.capsules, self.labels + other.labels)

    def to_dict(self) -> dict:
        return {"capsules": [{"label": lab, "a": c.a.tolist(), "b": c.b.tolist(), "radius": c.r}
                             for c, lab in zip(self.capsules, self.labels)]}

    @classmethod
    def from_dict(cls, data: dict) -> "CapsuleSet":
        items = data.get("capsules", [])
        caps = [Capsule(c["a"], c["b"], c["radius"]) for c in items]
        return cls(caps, [c.get("label", str(i)) for i, c in enumerate(items)])


def segment_distance(p1, q1, p2, q2) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimum distance between segments ``p1q1`` and ``p2q2`` and the witness points."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    if a <= _EPS and e <= _EPS:
        s = t = 0.0
    elif a <= _EPS:
        s, t = 0.0, min(max(f / e, 0.0), 1.0)
    else:
        c = d1 @ r
        if e <= _EPS:
            s, t = min(max(-c / a, 0.0), 1.0), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > _EPS * a * e else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                s, t = min(max(-c / a, 0.0), 1.0), 0.0
            elif t > 1.0:
                s, t = min(max((b - c) / a, 0.0), 1.0), 1.0
    w1 = p1 + s * d1
    w2 = p2 + t * d2
    return float(np.linalg.norm(w1 - w2)), w1, w2


def segment_distances(P1, Q1, P2, Q2) -> np.ndarray:
    """Distances only, for broadcastable endpoint arrays of shape ``(..., 3)``."""
    P1, Q1, P2, Q2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (P1, Q1, P2, Q2)))
    shape = P1.shape[:-1]
    flat = [np.ascontiguousarray(v.reshape(-1, 3)) for v in (P1, Q1, P2, Q2)]
    return _kernels.seg_dist_many(*flat).reshape(shape)


def capsule_distance(c1: Capsule, c2: Capsule) -> float:
    """Signed clearance between two capsules; negative values are penetration depth."""
    # canonical argument order makes the result exactly symmetric
    if (tuple(c2.a), tuple(c2.b), c2.r) < (tuple(c1.a), tuple(c1.b), c1.r):
        c1, c2 = c2, c1
    d, _, _ = segment_distance(c1.a, c1.b, c2.a, c2.b)
    return d - c1.r - c2.r


# --------------------------------------------------------------------------- robot vs env


class MinDistance(NamedTuple):
    d: float
    robot_index: int
    env_index: int


def _robot_arrays(model: RobotModel):
    cached = model.__dict__.get("_capsule_arrays")
    if cached is None:
        caps = model.link_capsules
        links = np.array([c.link for c in caps], dtype=int)
        A = np.array([[*c.a, 1.0] for c in caps]).reshape(len(caps), 4)
        B = np.array([[*c.b, 1.0] for c in caps]).reshape(len(caps), 4)
        R = np.array([c.radius for c in caps])
        cached = (links, np.ascontiguousarray(A), np.ascontiguousarray(B), R)
        object.__setattr__(model, "_capsule_arrays", cached)
    return cached


def robot_capsules_batch(model: RobotModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World endpoints ``(B, n, 3)`` x2 and radii ``(n,)`` of the robot capsules."""
    links, A, B, R = _robot_arrays(model)
    Aw, Bw = _kernels.place_capsules(frames_batch(model, Q), links, A, B)
    return Aw, Bw, R


def robot_capsules(model: RobotModel, q) -> CapsuleSet:
    Aw, Bw, R = robot_capsules_batch(model, np.asarray(q, dtype=float)[None])
    links = [c.link for c in model.link_capsules]
    return CapsuleSet([Capsule(a, b, r) for a, b, r in zip(Aw[0], Bw[0], R)],
                      [f"link{k}" for k in links])


def clearance_matrix(model: RobotModel, Q: np.ndarray, env: CapsuleSet) -> np.ndarray:
    """Clearance of every (robot capsule, env capsule) pair, shape ``(B, n_robot, n_env)``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Aw, Bw, R = robot_capsules_batch(model, Q)
    return _kernels.clearances(Aw, Bw, R, env.A, env.B, env.R)


def min_distance(model: RobotModel, q, env: CapsuleSet) -> MinDistance:
    """Minimum clearance between robot link capsules placed at ``q`` and ``env``.

    Ties resolve to the lowest robot capsule index, then the lowest env index.
    """
    if len(env) == 0:
        raise ValueError("environment capsule set is empty")
    C = clearance_matrix(model, q, env)[0]
    k = int(np.argmin(C))
    i, j = divmod(k, C.shape[1])
    return MinDistance(float(C[i, j]), i, j)


def pair_clearance_batch(model: RobotModel, Q: np.ndarray, env: CapsuleSet, pair: tuple[int, int]) -> np.ndarray:
    """Clearance of one (robot, env) capsule pair for many configurations."""
    Aw, Bw, R = robot_capsules_batch(model, np.atleast_2d(np.asarray(Q, dtype=float)))
    return _kernels.pair_clearance(Aw, Bw, R, env.A, env.B, env.R, pair[0], pair[1])


def distance_gradient(model: RobotModel, q, env: CapsuleSet, step: float = GRADIENT_STEP) -> np.ndarray:
    """Central-difference gradient of the clearance with respect to ``q``.

    The difference is taken on the pair that is closest at ``q``, so a switch
    of the closest pair inside the stencil yields that pair's one-sided
    derivative instead of a mix of two pairs.
    """
    q = model.check(q).astype(float)
    md = min_distance(model, q, env)
    n = model.dof
    Q = np.concatenate([q + step * np.eye(n), q - step * np.eye(n)])
    d = pair_clearance_batch(model, Q, env, (md.robot_index, md.env_index))
    return (d[:n] - d[n:]) / (2 * step)
