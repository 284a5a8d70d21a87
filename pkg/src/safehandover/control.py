"""Tracking controllers, safe-set filters and exact integrators.

Two execution styles share this module:

* jerk level - a pre-planned, jerk-bounded joint trajectory (:func:`jpc_plan`)
  whose jerk stream is filtered by :func:`jssa_filter`;
* acceleration level - a low-rate PD law (:func:`pd_acceleration`) whose
  output is filtered by :func:`ssa_filter`.

Both filters use the safety index

    phi = d_min - d - k_v * d'            (acceleration order)
    phi = d_min - d - k_v * d' - k_a * d''  (jerk order)

and, while ``phi >= 0``, project the nominal command onto the half-space
``dphi/dt <= -eta * phi`` (minimum-norm change).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CapsuleSet, clearance_matrix, min_distance
from .kinematics import RobotModel

FD_STEP_Q = 1e-6
FD_STEP_T = 1e-3
_LIMIT_MARGIN = 1.0 - 1e-9


class ControlError(Exception):
    pass


class InvalidLimits(ControlError, ValueError):
    pass


class InfeasibleSafeControl(ControlError):
    pass


@dataclass(frozen=True, eq=False)
class MotionLimits:
    v_max: np.ndarray
    a_max: np.ndarray
    j_max: np.ndarray

    def __post_init__(self):
        for name in ("v_max", "a_max", "j_max"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
                raise InvalidLimits(f"{name} must be finite and strictly positive")
            object.__setattr__(self, name, arr)
        if not (self.v_max.shape == self.a_max.shape == self.j_max.shape):
            raise InvalidLimits("limit vectors must have equal length")

    @classmethod
    def from_model(cls, model: RobotModel, scale: float = 1.0) -> "MotionLimits":
        return cls(model.v_max * scale, model.a_max * scale, model.j_max * scale)


@dataclass(frozen=True, eq=False)
class ControllerState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    t: float = 0.0

    @classmethod
    def at_rest(cls, q, t: float = 0.0) -> "ControllerState":
        q = np.asarray(q, dtype=float)
        return cls(q.copy(), np.zeros_like(q), np.zeros_like(q), t)


@dataclass(frozen=True)
class SafetyParams:
    d_min: float = 0.10
    k_v: float = 1.0
    k_a: float = 0.2
    eta: float = 5.0

    def __post_init__(self):
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")
        if self.k_v < 0 or self.k_a < 0:
            raise ValueError("safety gains must be non-negative")
        if not self.eta > 0:
            raise ValueError("eta must be positive")


# --------------------------------------------------------------------------- jerk-bounded planning


def scurve_durations(D: float, v: float, a: float, j: float) -> tuple[float, float, float]:
    """Time-optimal rest-to-rest S-curve phases for distance ``|D|``.

    Returns ``(t_jerk, t_const_accel, t_cruise)``; the profile runs
    ``t_jerk, t_const_accel, t_jerk, t_cruise, t_jerk, t_const_accel, t_jerk``.
    """
    D = abs(D)
    if D == 0.0:
        return 0.0, 0.0, 0.0
    if v * j >= a * a:
        tj, ta = a / j, v / a - a / j
    else:
        tj, ta = math.sqrt(v / j), 0.0
    d_acc = v * (2 * tj + ta)
    if D >= d_acc:
        return tj, ta, (D - d_acc) / v
    if D >= 2 * a**3 / j**2:
        tj = a / j
        ta = (-3 * tj + math.sqrt(tj * tj + 4 * D / a)) / 2
        return tj, ta, 0.0
    return (D / (2 * j)) ** (1.0 / 3.0), 0.0, 0.0


def _scurve_segments(D: float, v: float, a: float, j: float) -> list[tuple[float, float]]:
    tj, ta, tv = scurve_durations(D, v, a, j)
    if tj == 0.0:
        return []
    s = math.copysign(j, D)
    return [(tj, s), (ta, 0.0), (tj, -s), (tv, 0.0), (tj, -s), (ta, 0.0), (tj, s)]


def _velocity_change(v0: float, a0: float, vt: float, a: float, j: float) -> list[tuple[float, float]]:
    """Fastest jerk-limited segments taking ``(v0, a0)`` to ``(vt, 0)``."""
    vz = v0 + a0 * abs(a0) / (2 * j)
    if abs(vt - vz) <= 1e-12:
        return [(abs(a0) / j, -math.copysign(j, a0))] if a0 != 0.0 else []
    s = math.copysign(1.0, vt - vz)
    b = s * a0
    w = s * (vt - v0)
    ap = math.sqrt(max(j * w + 0.5 * b * b, 0.0))
    hold = 0.0
    if ap > a:
        ap = a
        hold = max((w - (2 * a * a - b * b) / (2 * j)) / a, 0.0)
    return [(max(ap - b, 0.0) / j, s * j), (hold, 0.0), (ap / j, -s * j)]


def _integrate_segments(q, v, a, segments):
    for dur, jk in segments:
        q = q + v * dur + a * dur**2 / 2 + jk * dur**3 / 6
        v = v + a * dur + jk * dur**2 / 2
        a = a + jk * dur
    return q, v, a


def _duration(segments) -> float:
    return sum(d for d, _ in segments)


def _cruise_profile(D: float, v0: float, a0: float, vp: float, a: float, j: float):
    """Segments reaching cruise speed ``vp``, cruising, then stopping; ``None`` if the cruise would be negative."""
    up = _velocity_change(v0, a0, vp, a, j)
    down = _velocity_change(vp, 0.0, 0.0, a, j)
    x_up = _integrate_segments(0.0, v0, a0, up)[0]
    x_down = _integrate_segments(0.0, vp, 0.0, down)[0]
    cruise = (D - x_up - x_down) / vp
    if cruise < 0.0:
        return None
    return up + [(cruise, 0.0)] + down


def _moving_segments(D: float, v0: float, a0: float, v: float, a: float, j: float,
                     T: float | None = None, iters: int = 40) -> list[tuple[float, float]]:
    """Jerk-limited segments from ``(0, v0, a0)`` to rest at ``D``.

    With ``T`` unset the cruise speed is the largest feasible one; with ``T``
    set it is lowered until the profile lasts ``T`` (when possible). Joints
    that cannot be stretched finish early and wait at rest.
    """
    stop = _velocity_change(v0, a0, 0.0, a, j)
    rest = D - _integrate_segments(0.0, v0, a0, stop)[0]
    if abs(rest) <= 1e-12:
        return stop
    sign = math.copysign(1.0, rest)
    best = _cruise_profile(D, v0, a0, sign * v, a, j)
    if best is None:
        lo, hi = 0.0, v
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if _cruise_profile(D, v0, a0, sign * mid, a, j) is None:
                hi = mid
            else:
                lo = mid
        best = _cruise_profile(D, v0, a0, sign * lo, a, j) if lo > 0 else None
        if best is None:
            return stop + _scurve_segments(rest, v, a, j)
        top = lo
    else:
        top = v
    if T is None or _duration(best) >= T:
        return best
    lo, hi = 0.0, top
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        prof = _cruise_profile(D, v0, a0, sign * mid, a, j)
        if prof is None or _duration(prof) > T:
            lo = mid
        else:
            hi = mid
    prof = _cruise_profile(D, v0, a0, sign * hi, a, j)
    return prof if prof is not None else best


class JerkPlan:

    """Piecewise-constant-jerk joint trajectory evaluated exactly at any time."""

    def __init__(self, t0: float, q0, v0, a0, knots, jerks, rate: float):
        self.t0 = float(t0)
        self.rate = float(rate)
        self.knots = np.asarray(knots, dtype=float)  # relative times, knots[0] == 0
        self.jerks = np.asarray(jerks, dtype=float).reshape(len(self.knots) - 1, len(q0))
        n = len(self.knots)
        self._q = np.empty((n, len(q0)))
        self._v = np.empty_like(self._q)
        self._a = np.empty_like(self._q)
        self._q[0], self._v[0], self._a[0] = q0, v0, a0
        for k in range(n - 1):
            dt = self.knots[k + 1] - self.knots[k]
            jk = self.jerks[k]
            self._q[k + 1] = self._q[k] + self._v[k] * dt + self._a[k] * dt**2 / 2 + jk * dt**3 / 6
            self._v[k + 1] = self._v[k] + self._a[k] * dt + jk * dt**2 / 2
            self._a[k + 1] = self._a[k] + jk * dt

    @property
    def duration(self) -> float:
        return float(self.knots[-1])

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    @property
    def goal(self) -> np.ndarray:
        return self._q[-1].copy()

    def state_at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(q, v, a, jerk)`` at absolute time ``t`` (held at rest past the end)."""
        tau = min(max(t - self.t0, 0.0), self.duration)
        k = int(np.searchsorted(self.knots, tau, side="right")) - 1
        k = min(max(k, 0), len(self.knots) - 1)
        dt = tau - self.knots[k]
        jk = self.jerks[k] if k < len(self.jerks) and t - self.t0 < self.duration else np.zeros(self._q.shape[1])
        q = self._q[k] + self._v[k] * dt + self._a[k] * dt**2 / 2 + jk * dt**3 / 6
        v = self._v[k] + self._a[k] * dt + jk * dt**2 / 2
        a = self._a[k] + jk * dt
        return q, v, a, jk

    def mean_jerk(self, t: float, dt: float) -> np.ndarray:
        """Average jerk over ``[t, t + dt]``: the constant jerk matching the acceleration change."""
        return (self.state_at(t + dt)[2] - self.state_at(t)[2]) / dt

    def sample(self, rate: float | None = None):
        """Times, positions, velocities, accelerations and per-period mean jerks on the command grid."""
        rate = rate or self.rate
        n = int(round(self.duration * rate))
        times = self.t0 + np.arange(n + 1) / rate
        states = [self.state_at(t) for t in times]
        Q = np.array([s[0] for s in states])
        V = np.array([s[1] for s in states])
        A = np.array([s[2] for s in states])
        J = np.diff(A, axis=0) * rate
        return times, Q, V, A, J


def jpc_plan(state: ControllerState, q_goal, limits: MotionLimits, rate: float = 125.0) -> JerkPlan:
    """Jerk-bounded trajectory from ``state`` to rest at ``q_goal``.

    From rest, every joint follows its own time-optimal S-curve stretched to
    the duration of the slowest joint, with the total rounded up to the
    command grid. Stretching by ``c`` scales velocity, acceleration and jerk
    by ``1/c``, ``1/c**2`` and ``1/c**3``, so the bounds keep holding.

    From a moving state, each joint changes speed to a cruise velocity,
    cruises and stops; the cruise speeds of the faster joints are lowered so
    that all joints arrive together on the grid. An initial acceleration that
    already points past a limit can make the first samples overshoot it.
    """
    if rate <= 0:
        raise InvalidLimits("rate must be positive")
    q0 = np.asarray(state.q, dtype=float)
    v0 = np.asarray(state.qd, dtype=float)
    a0 = np.asarray(state.qdd, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    n = len(q0)
    if not (len(limits.v_max) == n and q_goal.shape == (n,)):
        raise InvalidLimits("limits and goal must match the state dimension")
    V = limits.v_max * _LIMIT_MARGIN
    A = limits.a_max * _LIMIT_MARGIN
    J = limits.j_max * _LIMIT_MARGIN
    dt = 1.0 / rate
    D = q_goal - q0

    def on_grid(t):
        return math.ceil(t * rate - 1e-9) * dt if t > 0 else 0.0

    if not (np.any(v0) or np.any(a0)):
        moves = [_scurve_segments(float(D[i]), V[i], A[i], J[i]) for i in range(n)]
        t_opt = [_duration(m) for m in moves]
        total = on_grid(max(t_opt, default=0.0))
        per_joint = []
        for i in range(n):
            c = total / t_opt[i] if t_opt[i] > 0 else 0.0
            per_joint.append([(d * c, jk / c**3) for d, jk in moves[i]] if c else [])
    else:
        fastest = [_moving_segments(float(D[i]), float(v0[i]), float(a0[i]), V[i], A[i], J[i]) for i in range(n)]
        total = on_grid(max(_duration(m) for m in fastest))
        per_joint = [_moving_segments(float(D[i]), float(v0[i]), float(a0[i]), V[i], A[i], J[i], T=total)
                     for i in range(n)]
    for i in range(n):
        slack = total - _duration(per_joint[i])
        if slack > 0:
            per_joint[i] = per_joint[i] + [(slack, 0.0)]

    if total == 0.0:
        return JerkPlan(state.t, q0, v0, a0, [0.0], np.zeros((0, n)), rate)
    cuts = {0.0, total}
    for segs in per_joint:
        cuts.update(b for b in np.cumsum([d for d, _ in segs]) if b < total)
    knots = np.array(sorted(cuts))
    knots = knots[np.concatenate([[True], np.diff(knots) > 1e-12])]
    knots[-1] = total
    mids = 0.5 * (knots[:-1] + knots[1:])
    jerks = np.zeros((len(knots) - 1, n))
    for i, segs in enumerate(per_joint):
        if not segs:
            continue
        ends = np.cumsum([d for d, _ in segs])
        vals = np.array([jk for _, jk in segs])
        jerks[:, i] = vals[np.minimum(np.searchsorted(ends, mids, side="right"), len(vals) - 1)]
    plan = JerkPlan(state.t, q0, v0, a0, knots, jerks, rate)
    # absorb floating-point residue so the plan ends exactly at rest on the goal
    if np.max(np.abs(plan._q[-1] - q_goal)) < 1e-9:
        plan._q[-1] = q_goal
    plan._v[-1] = np.where(np.abs(plan._v[-1]) < 1e-9, 0.0, plan._v[-1])
    plan._a[-1] = np.where(np.abs(plan._a[-1]) < 1e-9, 0.0, plan._a[-1])
    return plan


# --------------------------------------------------------------------------- PD


def pd_acceleration(state: ControllerState, q_ref, kp: float, kd: float, a_max) -> np.ndarray:
    """``kp * (q_ref - q) - kd * qd`` clipped to ``+-a_max``."""
    u = kp * (np.asarray(q_ref, dtype=float) - state.q) - kd * state.qd
    a_max = np.asarray(a_max, dtype=float)
    return np.clip(u, -a_max, a_max)


# --------------------------------------------------------------------------- safety index and filters


@dataclass(frozen=True, eq=False)
class SafetyIndex:
    phi: float
    d: float
    d_dot: float
    d_ddot: float
    grad: np.ndarray
    pair: tuple[int, int]
    row: np.ndarray
    bound: float
    order: str
    rows: np.ndarray | None = None
    bounds: np.ndarray | None = None


def safety_index(model: RobotModel, state: ControllerState, env: CapsuleSet, params: SafetyParams,
                 order: str = "accel") -> SafetyIndex:
    """Safety index and the linear constraints ``rows . command <= bounds``.

    The index is evaluated for every (robot, env) capsule pair. ``phi`` is
    the largest pairwise value and ``row``/``bound`` belong to that pair
    (ties resolve to the lowest pair index); ``rows``/``bounds`` hold every
    pair with ``phi >= 0``, most critical first, so a pair that is not yet
    the closest but approaches fast is guarded too. ``d`` is the minimum
    clearance over all pairs. ``d'`` is a pair's clearance gradient times the
    joint velocity; higher time derivatives come from central differences of
    that pair's clearance along the current motion with the command set to
    zero.
    """
    if order not in ("accel", "jerk"):
        raise ValueError(f"unknown safety index order {order!r}")
    if len(env) == 0:
        raise ValueError("environment capsule set is empty")
    q, qd, qdd = state.q, state.qd, state.qdd
    n = model.dof
    h = FD_STEP_T
    eye = np.eye(n) * FD_STEP_Q
    if order == "accel":
        along = [q + qd * tau for tau in (h, -h)]
    else:
        along = [q + qd * tau + 0.5 * qdd * tau**2 for tau in (h, -h, 2 * h, -2 * h)]
    Q = np.concatenate([q[None], q + eye, q - eye, np.array(along)])
    C = clearance_matrix(model, Q, env)
    n_env = C.shape[2]
    vals = C.reshape(len(Q), -1)
    d = vals[0]
    grad = (vals[1:n + 1] - vals[n + 1:2 * n + 1]) / (2 * FD_STEP_Q)
    d_dot = qd @ grad
    dp, dm = vals[2 * n + 1], vals[2 * n + 2]
    second = (dp - 2 * d + dm) / h**2
    if order == "accel":
        phi = params.d_min - d - params.k_v * d_dot
        d_ddot = second + qdd @ grad
        rows = -params.k_v * grad.T
        bounds = -params.eta * phi + d_dot + params.k_v * second
    else:
        d2p, d2m = vals[2 * n + 3], vals[2 * n + 4]
        third = (d2p - 2 * dp + 2 * dm - d2m) / (2 * h**3)
        d_ddot = second
        phi = params.d_min - d - params.k_v * d_dot - params.k_a * d_ddot
        rows = -params.k_a * grad.T
        bounds = -params.eta * phi + d_dot + params.k_v * d_ddot + params.k_a * third
    k = int(np.argmax(phi))
    active = np.flatnonzero(phi >= 0.0)
    active = active[np.argsort(-phi[active], kind="stable")]
    return SafetyIndex(float(phi[k]), float(d.min()), float(d_dot[k]), float(d_ddot[k]), grad[:, k].copy(),
                       divmod(k, n_env), rows[k].copy(), float(bounds[k]), order, rows[active], bounds[active])


def project_halfspace(u, row, bound: float) -> np.ndarray:
    """Closest point to ``u`` satisfying ``row . x <= bound``."""
    u = np.asarray(u, dtype=float)
    row = np.asarray(row, dtype=float)
    excess = float(row @ u) - bound
    if excess <= 0.0:
        return u
    return u - (excess / float(row @ row)) * row


def project_polyhedron(u, rows, bounds, iters: int = 500, tol: float = 1e-12) -> np.ndarray:
    """Closest point to ``u`` satisfying every ``rows[i] . x <= bounds[i]`` (Hildreth)."""
    u = np.asarray(u, dtype=float)
    if np.all(rows @ u <= bounds):
        return u
    norms = np.einsum("ij,ij->i", rows, rows)
    lam = np.zeros(len(rows))
    x = u.copy()
    for _ in range(iters):
        moved = 0.0
        for i in range(len(rows)):
            if norms[i] <= 1e-24:
                continue
            new = max(0.0, lam[i] + (rows[i] @ x - bounds[i]) / norms[i])
            step = new - lam[i]
            if step != 0.0:
                x -= step * rows[i]
                lam[i] = new
                moved = max(moved, abs(step) * math.sqrt(norms[i]))
        if moved <= tol:
            break
    return x


def _filter(u_nom, index: SafetyIndex, limit) -> np.ndarray:
    # one active pair: closed-form projection; several: projection onto their intersection
    if index.phi < 0.0:
        return u_nom
    if float(np.linalg.norm(index.row)) <= 1e-12:
        raise InfeasibleSafeControl(f"safety constraint has no control authority (phi={index.phi:.4f})")
    if index.rows is not None and len(index.rows) > 1:
        u = project_polyhedron(u_nom, index.rows, index.bounds)
    else:
        u = project_halfspace(u_nom, index.row, index.bound)
    if u is u_nom:
        return u_nom
    return np.clip(u, -limit, limit)


def ssa_filter(model: RobotModel, u_nom, state: ControllerState, env: CapsuleSet, params: SafetyParams,
               a_max, index: SafetyIndex | None = None) -> np.ndarray:
    """Acceleration-level safe set filter; returns ``u_nom`` itself when ``phi < 0``."""
    index = index or safety_index(model, state, env, params, "accel")
    return _filter(u_nom, index, np.asarray(a_max, dtype=float))


def jssa_filter(model: RobotModel, j_nom, state: ControllerState, env: CapsuleSet, params: SafetyParams,
                j_max, index: SafetyIndex | None = None) -> np.ndarray:
    """Jerk-level safe set filter; returns ``j_nom`` itself when ``phi < 0``."""
    index = index or safety_index(model, state, env, params, "jerk")
    return _filter(j_nom, index, np.asarray(j_max, dtype=float))


def brake_command(state: ControllerState, limits: MotionLimits, order: str, dt: float) -> np.ndarray:
    """Strongest admissible command driving the joints towards rest."""
    a_des = np.clip(-state.qd / dt, -limits.a_max, limits.a_max)
    if order == "accel":
        return a_des
    a_des = np.clip(-state.qd / max(dt, 0.05), -limits.a_max, limits.a_max)
    return np.clip((a_des - state.qdd) / dt, -limits.j_max, limits.j_max)


# --------------------------------------------------------------------------- integration


@dataclass
class ClampEvent:
    t: float
    joint: int
    quantity: str


def integrate_step(state: ControllerState, command, dt: float, limits: MotionLimits | None = None,
                   order: str = "jerk") -> tuple[ControllerState, list[ClampEvent]]:
    """Exact integration of a command held constant for ``dt``.

    ``order="jerk"`` treats the command as jerk (triple integrator),
    ``order="accel"`` as acceleration (double integrator). Velocity and
    acceleration are clipped to ``limits`` afterwards; each clip is reported.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    c = np.asarray(command, dtype=float)
    q, v, a = state.q, state.qd, state.qdd
    if order == "jerk":
        q1 = q + v * dt + a * dt**2 / 2 + c * dt**3 / 6
        v1 = v + a * dt + c * dt**2 / 2
        a1 = a + c * dt
    elif order == "accel":
        q1 = q + v * dt + c * dt**2 / 2
        v1 = v + c * dt
        a1 = c.copy()
    else:
        raise ValueError(f"unknown command order {order!r}")
    t1 = state.t + dt
    events = []
    if limits is not None:
        for name, arr, lim in (("acceleration", a1, limits.a_max), ("velocity", v1, limits.v_max)):
            over = np.abs(arr) > lim
            if np.any(over):
                for i in np.flatnonzero(over):
                    events.append(ClampEvent(t1, int(i), name))
                np.clip(arr, -lim, lim, out=arr)
    return ControllerState(q1, v1, a1, t1), events
