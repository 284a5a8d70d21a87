"""Deterministic multi-rate closed-loop handover simulator.

Each safety step runs, in this order: perception (when a camera frame is
due), task (on command ticks), tracking (on command ticks), safety filter,
integration. The human is replayed open loop from a skeleton file; the
safety filter and the logged clearance use the capsules of the windowed
mean skeleton (the expected human), the raw latest frame is logged too.

Run logs are written as ``<name>.csv`` plus ``<name>.summary.json``. CSV
columns, in order::

    t, stage, goal_id, d, d_raw, intervened, clamps, track_err, frame_t,
    q0..q{n-1}, qd0.., qdd0.., ee_x, ee_y, ee_z

``d`` is the minimum clearance over the safety steps since the previous
row, ``intervened`` and ``clamps`` count filter interventions and limit
clamps over the same steps, ``frame_t`` is the stamp of the newest camera
frame consumed so far.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .adaptation import AdaptParams, IKFailed
from .control import (
    ControlError,
    ControllerState,
    InfeasibleSafeControl,
    JerkPlan,
    MotionLimits,
    SafetyParams,
    brake_command,
    integrate_step,
    jpc_plan,
    jssa_filter,
    pd_acceleration,
    safety_index,
    ssa_filter,
)
from .geometry import CapsuleSet, min_distance
from .kinematics import KinematicsError, LinkCapsule, Pose, load_model, fk_position
from .perception import (
    DEFAULT_WINDOW,
    BodyRadii,
    DeliverySpec,
    GoalAdaptParams,
    PerceptionError,
    human_capsules,
    load_skeleton_trajectory,
    mean_frame,
)
from .task import (
    EventKind,
    IllegalTransition,
    Stage,
    StaticPoses,
    TaskEvent,
    TaskState,
    resolve_goal,
    step_stage,
)

PIPELINES = {"preplanned-jerk": "jerk", "feedback-accel": "accel"}
DEFAULT_RATES = {"preplanned-jerk": (125.0, 1000.0, 30.0), "feedback-accel": (30.0, 120.0, 30.0)}
STEP_ORDER = ("perception", "task", "tracking", "safety", "integrate")


class ConfigError(Exception):
    pass


class IncompleteLog(Exception):
    pass


# --------------------------------------------------------------------------- config


def _pose(data, what: str) -> Pose:
    try:
        return Pose(data["p"], data.get("quat", [1.0, 0.0, 0.0, 0.0]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: invalid pose ({exc})") from exc


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    robot: str
    pipeline: str
    skeleton: Path
    object_pose: Pose
    events: tuple[TaskEvent, ...] = ()
    object_home: Pose | None = None
    home: tuple[float, ...] | None = None
    command_rate: float | None = None
    safety_rate: float | None = None
    perception_rate: float | None = None
    duration: float = 20.0
    return_object: bool = True
    safety: SafetyParams = field(default_factory=SafetyParams)
    goal_adapt: GoalAdaptParams = field(default_factory=GoalAdaptParams)
    adapt: AdaptParams = field(default_factory=AdaptParams)
    delivery: DeliverySpec = field(default_factory=DeliverySpec)
    body: BodyRadii = field(default_factory=BodyRadii)
    limits_scale: float = 1.0
    object_length: float = 0.10
    object_radius: float = 0.03
    window: int = DEFAULT_WINDOW
    kp: float = 9.0
    kd: float = 6.0
    completion_tolerance: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.pipeline in DEFAULT_RATES:
            c, s, p = DEFAULT_RATES[self.pipeline]
            object.__setattr__(self, "command_rate", float(self.command_rate or c))
            object.__setattr__(self, "safety_rate", float(self.safety_rate or s))
            object.__setattr__(self, "perception_rate", float(self.perception_rate or p))
        if self.object_home is None:
            object.__setattr__(self, "object_home", self.object_pose)
        object.__setattr__(self, "skeleton", Path(self.skeleton))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def order(self) -> str:
        return PIPELINES[self.pipeline]

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))

    def validate(self) -> "ScenarioConfig":
        """Cross-check the configuration without simulating; raises :class:`ConfigError`."""
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {sorted(PIPELINES)}, got {self.pipeline!r}")
        try:
            model = load_model(self.robot)
        except (KeyError, ValueError, OSError) as exc:
            raise ConfigError(f"robot: {exc}") from exc
        for name in ("command_rate", "safety_rate", "perception_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.safety_rate < self.command_rate:
            raise ConfigError(f"safety rate ({self.safety_rate:g} Hz) must be >= command rate "
                              f"({self.command_rate:g} Hz)")
        ratio = self.safety_rate / self.command_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("safety rate must be an integer multiple of the command rate")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.skeleton.is_file():
            raise ConfigError(f"skeleton file not found: {self.skeleton}")
        if any(b.t < a.t for a, b in zip(self.events, self.events[1:])):
            raise ConfigError("event times must be non-decreasing")
        if self.home is not None and len(self.home) != model.dof:
            raise ConfigError(f"home has {len(self.home)} values, {model.name} has {model.dof} joints")
        if not (self.object_length > 0 and self.object_radius > 0):
            raise ConfigError("object length and radius must be positive")
        if not self.limits_scale > 0:
            raise ConfigError("limits scale must be positive")
        if self.window < 2:
            raise ConfigError("window must hold at least 2 frames")
        if not self.completion_tolerance > 0:
            raise ConfigError("completion tolerance must be positive")
        return self

    # ---------------------------------------------------------------- JSON

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ScenarioConfig":
        known = {"name", "robot", "pipeline", "rates", "skeleton", "events", "return_object", "safety",
                 "goal_adaptation", "adaptation", "limits", "poses", "delivery", "object", "body", "window",
                 "pd_gains", "completion_tolerance", "duration", "rng_seed"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}")
        for key in ("name", "robot", "pipeline", "skeleton", "poses"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        try:
            rates = data.get("rates", {})
            poses = data["poses"]
            if "object" not in poses:
                raise ConfigError("poses.object is required")
            events = tuple(TaskEvent.from_dict(e) for e in data.get("events", []))
            limits = data.get("limits", {})
            gains = data.get("pd_gains", {})
            obj = data.get("object", {})
            adapt = dict(data.get("adaptation", {}))
            seed = int(data.get("rng_seed", 0))
            adapt["rng_seed"] = seed
            skeleton = Path(data["skeleton"])
            if not skeleton.is_absolute():
                skeleton = Path(base_dir) / skeleton
            return cls(
                name=str(data["name"]),
                robot=str(data["robot"]),
                pipeline=str(data["pipeline"]),
                skeleton=skeleton,
                object_pose=_pose(poses["object"], "poses.object"),
                object_home=_pose(poses["object_home"], "poses.object_home") if "object_home" in poses else None,
                home=tuple(float(v) for v in poses["home"]) if "home" in poses else None,
                events=events,
                command_rate=rates.get("command"),
                safety_rate=rates.get("safety"),
                perception_rate=rates.get("perception"),
                duration=float(data.get("duration", 20.0)),
                return_object=bool(data.get("return_object", True)),
                safety=SafetyParams(**data.get("safety", {})),
                goal_adapt=GoalAdaptParams(**data.get("goal_adaptation", {})),
                adapt=AdaptParams(**adapt),
                delivery=DeliverySpec(**data.get("delivery", {})),
                body=BodyRadii(**data.get("body", {})),
                limits_scale=float(limits.get("scale", 1.0)),
                object_length=float(obj.get("length", 0.10)),
                object_radius=float(obj.get("radius", 0.03)),
                window=int(data.get("window", DEFAULT_WINDOW)),
                kp=float(gains.get("kp", 9.0)),
                kd=float(gains.get("kd", 6.0)),
                completion_tolerance=float(data.get("completion_tolerance", 0.01)),
                rng_seed=seed,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"scenario not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent)


def bundled_scenarios() -> list[str]:
    root = resources.files("safehandover") / "data" / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def scenario_path(name_or_path: str | Path) -> Path:
    """Path of a scenario file, looking up bundled scenario names as well."""
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        return path
    res = resources.files("safehandover") / "data" / "scenarios" / f"{name_or_path}.json"
    return Path(str(res))


def load_scenario(name_or_path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.load(scenario_path(name_or_path))


# --------------------------------------------------------------------------- run log


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


class RunLog:
    """Command-rate time series of one run plus its goal and stage history."""

    def __init__(self, name: str, robot: str, pipeline: str, dof: int, d_min: float, command_rate: float):
        self.name = name
        self.robot = robot
        self.pipeline = pipeline
        self.dof = dof
        self.d_min = d_min
        self.command_rate = command_rate
        self.t: list[float] = []
        self.stage: list[str] = []
        self.goal_id: list[int] = []
        self.d: list[float] = []
        self.d_raw: list[float] = []
        self.intervened: list[int] = []
        self.clamps: list[int] = []
        self.track_err: list[float] = []
        self.frame_t: list[float] = []
        self.q: list[np.ndarray] = []
        self.qd: list[np.ndarray] = []
        self.qdd: list[np.ndarray] = []
        self.ee: list[np.ndarray] = []
        self.timeline: list[tuple[str, float]] = []
        self.goals: list[dict] = []
        self.clamp_events: list[dict] = []
        self.events_consumed: list[dict] = []
        self.infeasible_steps = 0
        self.safety_steps = 0
        self.min_step_distance = math.inf
        self.complete = False
        self.error: str | None = None

    def __len__(self) -> int:
        return len(self.t)

    def columns(self) -> list[str]:
        n = self.dof
        return (["t", "stage", "goal_id", "d", "d_raw", "intervened", "clamps", "track_err", "frame_t"]
                + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)] + [f"qdd{i}" for i in range(n)]
                + ["ee_x", "ee_y", "ee_z"])

    def rows(self):
        for k in range(len(self.t)):
            yield ([self.t[k], self.stage[k], self.goal_id[k], self.d[k], self.d_raw[k], self.intervened[k],
                    self.clamps[k], self.track_err[k], self.frame_t[k]]
                   + list(self.q[k]) + list(self.qd[k]) + list(self.qdd[k]) + list(self.ee[k]))

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))

    def stage_durations(self) -> dict[str, float]:
        out: dict[str, float] = {}
        end = self.t[-1] if self.t else 0.0
        for (stage, t0), nxt in zip(self.timeline, self.timeline[1:] + [("", end)]):
            out[stage] = out.get(stage, 0.0) + (nxt[1] - t0)
        return out

    def summary(self) -> dict:
        d = np.asarray(self.d)
        k = int(np.argmin(d)) if len(d) else 0
        return _jsonable({
            "name": self.name,
            "robot": self.robot,
            "pipeline": self.pipeline,
            "complete": self.complete,
            "error": self.error,
            "duration": self.t[-1] if self.t else 0.0,
            "samples": len(self.t),
            "d_min": self.d_min,
            "min_distance": float(d[k]) if len(d) else None,
            "min_distance_t": self.t[k] if len(d) else None,
            "min_raw_distance": float(np.min(self.d_raw)) if self.d_raw else None,
            "margin_respected": bool(len(d) and d.min() >= self.d_min - 1e-6),
            "stage_timeline": [list(s) for s in self.timeline],
            "stage_durations": self.stage_durations(),
            "max_tracking_error": float(np.max(self.track_err)) if self.track_err else 0.0,
            "intervention_samples": int(np.count_nonzero(self.intervened)),
            "infeasible_steps": self.infeasible_steps,
            "clamp_events": len(self.clamp_events),
            "events_consumed": self.events_consumed,
            "goals": self.goals,
            "step_order": list(STEP_ORDER),
        })

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.name}.csv"
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        summary_path = out / f"{self.name}.summary.json"
        summary_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return csv_path, summary_path


# --------------------------------------------------------------------------- simulation


def _perception_tick(k: int, perception_rate: float, safety_rate: float) -> int:
    return math.floor(k * perception_rate / safety_rate + 1e-9)


def run_scenario(config: ScenarioConfig) -> RunLog:
    """Simulate ``config``; module errors stop the run and leave ``complete`` false."""
    config.validate()
    base = load_model(config.robot)
    if config.home is not None:
        base = replace(base, home=config.home)
    carried = base.with_capsule(LinkCapsule(base.dof + 1, (0.0, 0.0, 0.0), (0.0, 0.0, config.object_length),
                                            config.object_radius))
    limits = MotionLimits.from_model(base, config.limits_scale)
    frames = load_skeleton_trajectory(config.skeleton)
    poses = StaticPoses(config.object_pose, config.object_home, base.home_q)
    order = config.order
    S, C, P = config.safety_rate, config.command_rate, config.perception_rate
    sub = int(round(S / C))
    dt = 1.0 / S
    n_rows = int(round(config.duration * C))
    K = n_rows * sub
    cmd_limit = limits.j_max if order == "jerk" else limits.a_max
    filt = jssa_filter if order == "jerk" else ssa_filter

    log = RunLog(config.name, base.name, config.pipeline, base.dof, config.safety.d_min, C)
    state = ControllerState.at_rest(base.home_q, 0.0)
    task = TaskState(return_required=config.return_object)
    model = base
    q_goal = base.home_q
    goal_id = 0
    plan: JerkPlan | None = None
    stale = False
    u_cmd = np.zeros(base.dof)
    seen: list = []
    next_frame = 0
    last_tick = -1
    env = env_raw = CapsuleSet()
    ev_i = 0
    d_acc, interv_acc, clamp_acc = math.inf, 0, 0
    log.timeline.append((task.stage.value, 0.0))
    zeros = np.zeros(base.dof)

    try:
        for k in range(K + 1):
            t = k / S
            # perception
            tick = _perception_tick(k, P, S)
            if tick != last_tick:
                last_tick = tick
                while next_frame < len(frames) and frames[next_frame].t <= t + 1e-12:
                    seen.append(frames[next_frame])
                    next_frame += 1
                if seen:
                    env = human_capsules(mean_frame(seen, config.window), config.body)
                    env_raw = human_capsules(seen[-1], config.body)
            command_tick = k % sub == 0
            # task
            if command_tick and ev_i < len(config.events):
                ev = config.events[ev_i]
                if t >= ev.t - 1e-12 and np.max(np.abs(state.q - q_goal)) <= config.completion_tolerance:
                    task, request = step_stage(task, ev)
                    ev_i += 1
                    log.events_consumed.append({"kind": ev.kind.value, "scheduled": ev.t, "t": t})
                    model = carried if task.attached else base
                    if log.timeline[-1][0] != task.stage.value:
                        log.timeline.append((task.stage.value, t))
                    if request is not None:
                        goal = resolve_goal(request, model, poses, frames=seen, env=env, delivery=config.delivery,
                                            goal_params=config.goal_adapt, adapt_params=config.adapt,
                                            window=config.window, q_seed=state.q)
                        q_goal = goal.q_g
                        goal_id += 1
                        plan, stale = None, True
                        log.goals.append(_goal_record(goal_id, t, goal, model))
            # tracking
            if command_tick:
                if order == "jerk":
                    if stale:
                        plan = jpc_plan(state, q_goal, limits, C)
                        stale = False
                else:
                    u_cmd = pd_acceleration(state, q_goal, config.kp, config.kd, limits.a_max)
            # safety
            index = safety_index(model, state, env, config.safety, order) if len(env) else None
            d_now = index.d if index is not None else math.inf
            d_acc = min(d_acc, d_now)
            log.min_step_distance = min(log.min_step_distance, d_now)
            log.safety_steps += 1
            if order == "jerk":
                nominal = plan.mean_jerk(t, dt) if plan is not None else zeros
            else:
                nominal = u_cmd
            if index is None:
                command = nominal
            else:
                try:
                    command = filt(model, nominal, state, env, config.safety, cmd_limit, index)
                except InfeasibleSafeControl:
                    command = brake_command(state, limits, order, dt)
                    log.infeasible_steps += 1
            intervened = command is not nominal
            if command_tick:
                _log_row(log, t, task.stage.value, goal_id, d_acc, model, state, env_raw, interv_acc, clamp_acc,
                         q_goal, seen[-1].t if seen else math.nan)
                d_acc, interv_acc, clamp_acc = math.inf, 0, 0
            if k == K:
                break
            # integrate
            interv_acc += int(intervened)
            if order == "jerk" and plan is not None and not intervened and not stale:
                q, v, a, _ = plan.state_at((k + 1) / S)
                state = ControllerState(q, v, a, (k + 1) / S)
            else:
                state, events = integrate_step(state, command, dt, limits, order)
                state = replace(state, t=(k + 1) / S)
                clamp_acc += len(events)
                log.clamp_events.extend({"t": e.t, "joint": e.joint, "quantity": e.quantity} for e in events)
                if order == "jerk" and plan is not None:
                    stale = True
        log.complete = True
    except (PerceptionError, IKFailed, IllegalTransition, KinematicsError, ControlError) as exc:
        log.error = f"{type(exc).__name__}: {exc}"
    return log


def _goal_record(goal_id: int, t: float, goal, model) -> dict:
    rec = {"id": goal_id, "t": t, "kind": goal.request.kind, "stage": goal.request.stage.value,
           "q_g": goal.q_g, "p": fk_position(model, goal.q_g)}
    if goal.x_G is not None:
        rec["x_G"] = goal.x_G.p
    if goal.x_nominal is not None:
        rec["x_nominal"] = goal.x_nominal.p
    if goal.sigma is not None:
        rec["sigma"] = goal.sigma
    if goal.adapt is not None:
        a = goal.adapt
        rec["adapt"] = {"d_seed": a.d_seed, "d": a.d, "V": a.V, "V_seed": a.V_seed, "e_omega": a.e_omega,
                        "accepted": a.accepted, "flag": a.flag}
    return rec


def _log_row(log, t, stage, goal_id, d, model, state, env_raw, interv, clamps, q_goal, frame_t):
    log.t.append(t)
    log.stage.append(stage)
    log.goal_id.append(goal_id)
    log.d.append(d)
    log.d_raw.append(min_distance(model, state.q, env_raw).d if len(env_raw) else math.inf)
    log.intervened.append(interv)
    log.clamps.append(clamps)
    log.track_err.append(float(np.max(np.abs(state.q - q_goal))))
    log.frame_t.append(frame_t)
    log.q.append(state.q.copy())
    log.qd.append(state.qd.copy())
    log.qdd.append(state.qdd.copy())
    log.ee.append(fk_position(model, state.q).copy())


# --------------------------------------------------------------------------- comparison


@dataclass
class CompareReport:
    stage_duration_deltas: dict[str, float]
    min_distance_gap: float
    goal_position_deltas: list[float]
    incomparable_stages: list[str]
    both_safe: bool

    @property
    def identical(self) -> bool:
        return (not self.incomparable_stages and self.min_distance_gap == 0.0
                and all(v == 0.0 for v in self.stage_duration_deltas.values())
                and all(v == 0.0 for v in self.goal_position_deltas))

    def to_dict(self) -> dict:
        return _jsonable({f.name: getattr(self, f.name) for f in fields(self)})


def compare_runs(a: RunLog, b: RunLog) -> CompareReport:
    """Differences between two complete runs (``b`` minus ``a``)."""
    for log in (a, b):
        if not log.complete:
            raise IncompleteLog(f"run {log.name!r} is incomplete: {log.error}")
    da, db = a.stage_durations(), b.stage_durations()
    stages = sorted(set(da) | set(db))
    deltas = {s: db.get(s, 0.0) - da.get(s, 0.0) for s in stages}
    seq_a = [s for s, _ in a.timeline]
    seq_b = [s for s, _ in b.timeline]
    incomparable = []
    if seq_a != seq_b:
        incomparable = sorted(set(seq_a) ^ set(seq_b)) or ["stage order differs"]
    ta, tb = np.asarray(a.t), np.asarray(b.t)
    end = min(ta[-1], tb[-1])
    mask = ta <= end + 1e-12
    dA = np.asarray(a.d)[mask]
    dB = np.interp(ta[mask], tb, np.asarray(b.d))
    both_finite = np.isfinite(dA) & np.isfinite(dB)
    gap = float(np.max(np.abs(dA - dB)[both_finite])) if np.any(both_finite) else 0.0
    goal_deltas = [float(np.linalg.norm(np.asarray(ga["p"]) - np.asarray(gb["p"])))
                   for ga, gb in zip(a.goals, b.goals) if ga["kind"] == gb["kind"]]
    safe = all(min(log.d) >= log.d_min - 1e-6 for log in (a, b))
    return CompareReport(deltas, gap, goal_deltas, incomparable, safe)
