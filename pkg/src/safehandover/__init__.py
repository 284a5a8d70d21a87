"""Simulated safe human-robot handover.

Perception-noise-aware delivery goals, null-space delivery configuration
adaptation, jerk-bounded and PD tracking with safe-set filters, and a
deterministic multi-rate simulator replaying human skeleton trajectories.
"""

from .adaptation import AdaptParams, AdaptResult, IKFailed, objective, user_adapt
from .control import (
    ControllerState,
    InfeasibleSafeControl,
    InvalidLimits,
    JerkPlan,
    MotionLimits,
    SafetyParams,
    integrate_step,
    jpc_plan,
    jssa_filter,
    pd_acceleration,
    safety_index,
    ssa_filter,
)
from .geometry import Capsule, CapsuleSet, capsule_distance, min_distance, segment_distance
from .kinematics import (
    NoConvergence,
    Pose,
    RobotModel,
    forward_kinematics,
    icop_correct,
    inverse_kinematics,
    jacobian,
    load_model,
    position_null_space,
)
from .perception import (
    GoalAdaptParams,
    SkeletonFrame,
    UncertaintyEstimate,
    adapt_goal,
    human_capsules,
    keypoint_stats,
    load_skeleton_trajectory,
    nominal_goal,
)
from .sim import ConfigError, RunLog, ScenarioConfig, compare_runs, load_scenario, run_scenario
from .task import EventKind, IllegalTransition, Stage, TaskEvent, TaskState, resolve_goal, step_stage

__version__ = "0.1.0"
