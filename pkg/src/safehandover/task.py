"""Handover stage machine and goal resolution.

Stages run Idle -> Reach -> Deliver -> Return -> Home -> Idle. Return is
skipped when the human keeps the object. Entering a stage emits one goal
request; the request is resolved into a joint goal by :func:`resolve_goal`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .adaptation import AdaptParams, AdaptResult, IKFailed, user_adapt
from .geometry import CapsuleSet
from .kinematics import NoConvergence, Pose, RobotModel, inverse_kinematics
from .perception import (
    DEFAULT_WINDOW,
    DeliverySpec,
    GoalAdaptParams,
    SkeletonFrame,
    adapt_goal,
    keypoint_stats,
    mean_frame,
    nominal_goal,
)


class Stage(enum.Enum):
    IDLE = "Idle"
    REACH = "Reach"
    DELIVER = "Deliver"
    RETURN = "Return"
    HOME = "Home"


class EventKind(enum.Enum):
    HUMAN_REQUESTS = "HumanRequests"
    OBJECT_GRASPED = "ObjectGrasped"
    HUMAN_TOOK_OBJECT = "HumanTookObject"
    HUMAN_RETURNED_OBJECT = "HumanReturnedObject"
    OBJECT_PLACED = "ObjectPlaced"
    AT_HOME = "AtHome"


class IllegalTransition(Exception):
    pass


@dataclass(frozen=True)
class TaskEvent:
    kind: EventKind
    t: float

    @classmethod
    def from_dict(cls, data: dict) -> "TaskEvent":
        return cls(EventKind(data["kind"]), float(data["t"]))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "t": self.t}


@dataclass(frozen=True)
class GoalRequest:
    """What the entered stage needs: ``object``, ``delivery``, ``object_home`` or ``home``."""

    kind: str
    stage: Stage


@dataclass(frozen=True)
class TaskState:
    stage: Stage = Stage.IDLE
    return_required: bool = True
    handed_over: bool = False
    attached: bool = False


def step_stage(state: TaskState, event: TaskEvent) -> tuple[TaskState, GoalRequest | None]:
    """Apply ``event``; returns the new state and the goal request of the entered stage, if any."""
    stage, kind = state.stage, event.kind
    E = EventKind
    if stage is Stage.IDLE and kind is E.HUMAN_REQUESTS:
        return replace(state, stage=Stage.REACH, handed_over=False), GoalRequest("object", Stage.REACH)
    if stage is Stage.REACH and kind is E.OBJECT_GRASPED:
        return replace(state, stage=Stage.DELIVER, attached=True), GoalRequest("delivery", Stage.DELIVER)
    if stage is Stage.DELIVER and kind is E.HUMAN_TOOK_OBJECT and not state.handed_over:
        if state.return_required:
            # stay put until the human hands the object back
            return replace(state, handed_over=True, attached=False), None
        return replace(state, stage=Stage.HOME, handed_over=True, attached=False), GoalRequest("home", Stage.HOME)
    if stage is Stage.DELIVER and kind is E.HUMAN_RETURNED_OBJECT and state.handed_over:
        return replace(state, stage=Stage.RETURN, attached=True), GoalRequest("object_home", Stage.RETURN)
    if stage is Stage.RETURN and kind is E.OBJECT_PLACED:
        return replace(state, stage=Stage.HOME, attached=False), GoalRequest("home", Stage.HOME)
    if stage is Stage.HOME and kind is E.AT_HOME:
        return replace(state, stage=Stage.IDLE), None
    raise IllegalTransition(f"event {kind.value} not allowed in stage {stage.value}")


@dataclass(frozen=True, eq=False)
class StaticPoses:
    object: Pose
    object_home: Pose
    home: np.ndarray


@dataclass(frozen=True, eq=False)
class ResolvedGoal:
    request: GoalRequest
    q_g: np.ndarray
    x_nominal: Pose | None = None
    x_G: Pose | None = None
    sigma: np.ndarray | None = None
    adapt: AdaptResult | None = None


def resolve_goal(
    request: GoalRequest,
    model: RobotModel,
    poses: StaticPoses,
    *,
    frames: Sequence[SkeletonFrame] = (),
    env: CapsuleSet | None = None,
    delivery: DeliverySpec | None = None,
    goal_params: GoalAdaptParams | None = None,
    adapt_params: AdaptParams | None = None,
    window: int = DEFAULT_WINDOW,
    q_seed=None,
) -> ResolvedGoal:
    """Joint goal for ``request``.

    Delivery goals take the windowed mean skeleton as the expected human,
    shift the nominal hand pose by the keypoint noise and adapt the arm
    configuration to the expected human capsules ``env``. Object poses go
    through IK only; home is the configured joint vector.
    """
    seed = poses.home if q_seed is None else np.asarray(q_seed, dtype=float)
    if request.kind == "home":
        return ResolvedGoal(request, np.array(poses.home, dtype=float))
    if request.kind in ("object", "object_home"):
        target = poses.object if request.kind == "object" else poses.object_home
        try:
            q = inverse_kinematics(model, target, seed)
        except NoConvergence as exc:
            raise IKFailed(f"{request.kind} pose unreachable for {model.name}: {exc}") from exc
        return ResolvedGoal(request, q, x_G=target)
    if request.kind != "delivery":
        raise ValueError(f"unknown goal request {request.kind!r}")
    delivery = delivery or DeliverySpec()
    goal_params = goal_params or GoalAdaptParams()
    expected = mean_frame(frames, window)
    unc, _ = keypoint_stats(frames, delivery.keypoint, window)
    x_nom = nominal_goal(expected, delivery)
    x_G = adapt_goal(x_nom, unc, goal_params)
    res = user_adapt(model, x_G, env if env is not None else CapsuleSet(), adapt_params, q_seed=seed)
    return ResolvedGoal(request, res.q_g, x_nom, x_G, unc.sigma, res)
