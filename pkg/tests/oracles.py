"""Independent reference computations used by the tests.

Each oracle is written without calling the code it checks: plain loops,
dense sampling or textbook closed forms.
"""

from __future__ import annotations

import math

import numpy as np

from safehandover.geometry import clearance_matrix
from safehandover.kinematics import frames_batch, jacobian_from_frames, position_null_space


def _rot_x(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])


def _rot_z(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def _trans(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def naive_fk(model, q) -> np.ndarray:
    """Tool transform by multiplying modified DH factors one at a time."""
    T = np.eye(4)
    for joint, qi in zip(model.joints, q):
        T = T @ _rot_x(joint.alpha) @ _trans(joint.a, 0, 0) @ _rot_z(qi + joint.theta_offset) @ _trans(0, 0, joint.d)
    return T @ model.tool


def _log_so3(R) -> np.ndarray:
    c = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    ang = math.acos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if ang < 1e-12:
        return w / 2
    return w * ang / (2 * math.sin(ang))


def fd_jacobian(model, q, h=1e-7) -> np.ndarray:
    """Central differences of the naive FK: position rows, then rotation-vector rows."""
    n = model.dof
    J = np.zeros((6, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        Tp, Tm = naive_fk(model, q + e), naive_fk(model, q - e)
        J[:3, i] = (Tp[:3, 3] - Tm[:3, 3]) / (2 * h)
        J[3:, i] = _log_so3(Tp[:3, :3] @ Tm[:3, :3].T) / (2 * h)
    return J


def sampled_segment_distance(p1, q1, p2, q2, grid=41, levels=8) -> float:
    """Segment distance by dense grid sampling of both parameters.

    The distance is convex in the two segment parameters, so repeatedly
    sampling a shrinking window around the best grid point converges to the
    global minimum.
    """
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    lo = np.zeros(2)
    hi = np.ones(2)
    best = np.inf
    for _ in range(levels):
        s = np.linspace(lo[0], hi[0], grid)
        t = np.linspace(lo[1], hi[1], grid)
        A = p1 + s[:, None] * (q1 - p1)
        B = p2 + t[:, None] * (q2 - p2)
        D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
        i, j = np.unravel_index(np.argmin(D), D.shape)
        best = min(best, D[i, j])
        ws, wt = 4 * (s[1] - s[0]), 4 * (t[1] - t[0])
        lo = np.array([max(s[i] - ws, 0.0), max(t[j] - wt, 0.0)])
        hi = np.array([min(s[i] + ws, 1.0), min(t[j] + wt, 1.0)])
    return float(best)


def scurve_time(D: float, v: float, a: float, j: float) -> float:
    """Minimum rest-to-rest time of a seven-segment double-S profile.

    Textbook closed form: first assume the cruise speed is reached, then
    fall back to the reduced-acceleration and pure-jerk cases.
    """
    D = abs(D)
    if D == 0:
        return 0.0
    if v * j >= a * a:
        tj, ta = a / j, a / j + v / a
    else:
        tj = math.sqrt(v / j)
        ta = 2 * tj
    tv = D / v - ta
    if tv >= 0:
        return 2 * ta + tv
    tj = a / j
    delta = a**4 / j**2 + 4 * a * D
    ta = (a * a / j + math.sqrt(delta)) / (2 * a)
    if ta < 2 * tj:
        tj = (D / (2 * j)) ** (1.0 / 3.0)
        ta = 2 * tj
    return 2 * ta


def _batched_position_correction(model, Q, p, iters=30):
    Q = Q.copy()
    for _ in range(iters):
        F = frames_batch(model, Q)
        e = p - F[:, -1, :3, 3]
        J = jacobian_from_frames(F)[:, :3]
        JJt = J @ np.swapaxes(J, 1, 2) + 1e-6 * np.eye(3)
        Q += np.einsum("bji,bj->bi", J, np.linalg.solve(JJt, e[..., None])[..., 0])
    F = frames_batch(model, Q)
    return Q, np.linalg.norm(p - F[:, -1, :3, 3], axis=1), F


def null_space_search(model, q_G, p_G, env, weight=1.0, samples=100_000, rounds=10, radius=1.5, shrink=0.6,
                      seed=1, chunk=20_000):
    """Brute-force best objective over random null-space offsets.

    ``samples`` offsets are split into ``rounds`` batches. Each batch is drawn
    uniformly from a ball in the position null space around the best
    configuration found so far (starting at ``q_G``), and the ball shrinks by
    ``shrink`` per round. Every offset is pulled back onto ``p_G`` by a
    batched position correction; offsets leaving the joint limits or missing
    the position are discarded. Returns ``(V, clearance, orientation error)``
    of the best valid sample.
    """
    rng = np.random.default_rng(seed)
    R0 = frames_batch(model, q_G[None])[0, -1, :3, :3]
    centre = np.asarray(q_G, dtype=float)
    best = (np.inf, np.nan, np.nan)
    per_round = samples // rounds
    r = radius
    for _ in range(rounds):
        B = position_null_space(model, centre)
        k = B.shape[0]
        u = rng.standard_normal((per_round, k))
        u /= np.linalg.norm(u, axis=1)[:, None]
        rr = r * rng.uniform(0, 1, per_round) ** (1 / k)
        Q0 = centre + (u * rr[:, None]) @ B
        for s in range(0, per_round, chunk):
            Q, err, F = _batched_position_correction(model, Q0[s:s + chunk], p_G)
            ok = (err < 1e-9) & np.all((Q >= model.lower) & (Q <= model.upper), axis=1)
            C = clearance_matrix(model, Q, env).reshape(len(Q), -1).min(axis=1)
            cosang = np.clip((np.einsum("bij,ij->b", F[:, -1, :3, :3], R0) - 1) / 2, -1, 1)
            V = np.where(ok, -C + weight * np.arccos(cosang), np.inf)
            i = int(np.argmin(V))
            if V[i] < best[0]:
                best = (float(V[i]), float(C[i]), float(np.arccos(cosang[i])))
                centre = Q[i].copy()
        r *= shrink
    return best
