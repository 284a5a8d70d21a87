"""Delivery-configuration adaptation.

Keeps the end-effector on the delivery position while moving the rest of
the arm through the position null space to gain clearance from the human,
trading orientation deviation against distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CapsuleSet, min_distance
from .kinematics import (
    NoConvergence,
    Pose,
    RobotModel,
    frames_batch,
    icop_correct,
    inverse_kinematics,
    jacobian,
    position_null_space,
    rotation_angle,
)


# length that converts orientation change into an equivalent clearance change
# when shaping the search distribution
SEARCH_LENGTH = 0.05


class IKFailed(Exception):
    pass


@dataclass(frozen=True)
class AdaptParams:
    step: float = 0.05
    orientation_weight: float = 1.0
    max_iters: int = 300
    rng_seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("perturbation step must be positive")
        if self.orientation_weight < 0:
            raise ValueError("orientation weight must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class AdaptResult:
    q_g: np.ndarray
    q_G: np.ndarray
    V: float
    d: float
    e_omega: float
    iters_used: int
    V_seed: float
    d_seed: float
    flag: str | None = None
    accepted: int = 0
    best_history: list[float] = field(default_factory=list)


def objective(model: RobotModel, q, env: CapsuleSet, q_G, orientation_weight: float) -> tuple[float, float, float]:
    """``(V, d, e_omega)`` with ``V = -d + w * e_omega``.

    ``e_omega`` is the angle of the rotation between the end-effector
    orientations at ``q`` and ``q_G``.
    """
    ref = frames_batch(model, np.asarray(q_G, dtype=float)[None])[0, -1, :3, :3]
    return _objective(model, np.asarray(q, dtype=float), env, ref, orientation_weight)


def _objective(model, q, env, ref_R, w):
    d = min_distance(model, q, env).d if len(env) else np.inf
    R = frames_batch(model, q[None])[0, -1, :3, :3]
    e = rotation_angle(ref_R, R)
    return -d + w * e, d, e


def search_direction(model: RobotModel, q, rng: np.random.Generator, orientation_weight: float) -> np.ndarray:
    """Random unit joint step inside the position null space at ``q``.

    Coefficients are Gaussian in the null-space basis, shrunk along
    directions that rotate the end-effector: each eigen-direction of the
    orientation metric ``M^T M`` (``M`` maps null-space coefficients to
    angular velocity) is scaled by ``1 / sqrt(1 + (w / SEARCH_LENGTH)**2 * s)``.
    With ``w = 0`` the direction is uniform on the null-space sphere.
    Returns an empty vector when there is no null space.
    """
    basis = position_null_space(model, q)
    if basis.shape[0] == 0:
        return np.zeros(0)
    z = rng.standard_normal(basis.shape[0])
    if orientation_weight > 0:
        M = jacobian(model, q)[3:] @ basis.T
        s, U = np.linalg.eigh(M.T @ M)
        scale = 1.0 / np.sqrt(1.0 + (orientation_weight / SEARCH_LENGTH) ** 2 * np.maximum(s, 0.0))
        z = U @ (scale * (U.T @ z))
    c = z / np.linalg.norm(z)
    return c @ basis


def user_adapt(model: RobotModel, x_G: Pose, env: CapsuleSet, params: AdaptParams | None = None,
               q_seed=None) -> AdaptResult:
    """Search the self-motion manifold of ``x_G``'s position for more clearance.

    Starts from ``q_G = IK(x_G)``; each iteration perturbs the incumbent by
    ``step`` along :func:`search_direction`, restores the position with
    :func:`icop_correct` and keeps the candidate if the objective improves.
    The seed's own objective is the initial best, so the result is never
    worse than ``q_G``. Candidates that leave the joint limits or fail the
    correction are dropped (the iteration still counts).
    """
    params = params or AdaptParams()
    seed = model.home_q if q_seed is None else np.asarray(q_seed, dtype=float)
    try:
        q_G = inverse_kinematics(model, x_G, seed)
    except NoConvergence as exc:
        raise IKFailed(f"delivery pose unreachable for {model.name}: {exc}") from exc

    ref = frames_batch(model, q_G[None])[0, -1, :3, :3]
    w = params.orientation_weight
    V0, d0, e0 = _objective(model, q_G, env, ref, w)

    def result(q, V, d, e, iters, flag=None, accepted=0, history=None):
        return AdaptResult(q.copy(), q_G.copy(), float(V), float(d), float(e), iters, float(V0), float(d0),
                           flag, accepted, history or [])

    if len(env) == 0:
        return result(q_G, V0, d0, e0, 0, "no_obstacles")
    if position_null_space(model, q_G).shape[0] == 0:
        return result(q_G, V0, d0, e0, 0, "no_null_space")

    rng = np.random.default_rng(params.rng_seed)
    p_G = x_G.p
    best_q, best = q_G.copy(), (V0, d0, e0)
    history = []
    accepted = 0
    for _ in range(params.max_iters):
        dq = search_direction(model, best_q, rng, w)
        if dq.size:
            try:
                cand = icop_correct(model, best_q + params.step * dq, p_G)
            except NoConvergence:
                cand = None
            if cand is not None and model.within_limits(cand):
                cost = _objective(model, cand, env, ref, w)
                if cost[0] < best[0]:
                    best_q, best = cand, cost
                    accepted += 1
        history.append(best[0])
    return result(best_q, *best, params.max_iters, None, accepted, history)
