"""Skeleton trajectories, keypoint statistics and delivery goals.

Skeleton files are JSON Lines, one frame per line::

    {"t": 0.0333, "keypoints": {"right_wrist": [x, y, z], ...}, "confidence": {"right_wrist": 0.9}}

Positions are metres in the robot base frame. Keypoints that were not
detected are simply left out; ``confidence`` is optional and defaults to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Capsule, CapsuleSet
from .kinematics import Pose

KEYPOINTS = (
    "right_wrist", "left_wrist", "right_elbow", "left_elbow",
    "right_shoulder", "left_shoulder", "head", "pelvis", "neck",
)
CORE_KEYPOINTS = ("right_shoulder", "left_shoulder", "pelvis", "right_wrist", "left_wrist",
                  "right_elbow", "left_elbow")
DEFAULT_WINDOW = 10


class PerceptionError(Exception):
    pass


class ParseError(PerceptionError):
    pass


class EmptyTrajectory(PerceptionError):
    pass


class InsufficientFrames(PerceptionError):
    pass


class MissingKeypoint(PerceptionError):
    pass


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    t: float
    keypoints: dict[str, np.ndarray]
    confidence: dict[str, float] = field(default_factory=dict)

    def has(self, name: str) -> bool:
        return name in self.keypoints and self.confidence.get(name, 1.0) > 0.0

    def point(self, name: str) -> np.ndarray:
        if not self.has(name):
            raise MissingKeypoint(f"keypoint {name!r} not detected at t={self.t:.3f}s")
        return self.keypoints[name]


@dataclass(frozen=True, eq=False)
class UncertaintyEstimate:
    sigma: np.ndarray
    window: int
    keypoint: str


@dataclass(frozen=True, eq=False)
class GoalAdaptParams:
    """Per-axis scalers and the unit direction pointing away from the human."""

    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    u_safe: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float).reshape(3)
        u = np.asarray(self.u_safe, dtype=float).reshape(3)
        if np.any(scale < 0):
            raise ValueError("goal adaptation scalers must be non-negative")
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("u_safe must be a unit vector")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "u_safe", u)


@dataclass(frozen=True, eq=False)
class DeliverySpec:
    """How a delivery pose is read off the skeleton."""

    keypoint: str = "right_wrist"
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "quat", np.asarray(self.quat, dtype=float).reshape(4))


@dataclass(frozen=True)
class BodyRadii:
    torso: float = 0.15
    head: float = 0.12
    limb: float = 0.06
    hand_length: float = 0.08
    thigh_length: float = 0.40


# --------------------------------------------------------------------------- I/O


def _parse_frame(record: dict) -> SkeletonFrame:
    kps = {}
    for name, xyz in record.get("keypoints", {}).items():
        v = np.asarray(xyz, dtype=float)
        if v.shape != (3,):
            raise ValueError(f"keypoint {name!r} must have 3 coordinates")
        kps[name] = v
    conf = {name: float(record.get("confidence", {}).get(name, 1.0)) for name in kps}
    for name, c in conf.items():
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence of {name!r} outside [0, 1]")
        if c > 0 and not np.all(np.isfinite(kps[name])):
            raise ValueError(f"keypoint {name!r} is not finite")
    return SkeletonFrame(float(record["t"]), kps, conf)


def parse_skeleton_lines(lines: Iterable[str], source: str = "<input>") -> list[SkeletonFrame]:
    frames = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            frames.append(_parse_frame(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{source}:{lineno}: {exc}") from exc
    if not frames:
        raise EmptyTrajectory(f"{source} contains no frames")
    # stable sort keeps file order for equal timestamps
    return sorted(frames, key=lambda f: f.t)


def load_skeleton_trajectory(source: str | Path) -> list[SkeletonFrame]:
    """Read a skeleton trajectory file; frames come back sorted by time."""
    path = Path(source)
    with path.open() as fh:
        return parse_skeleton_lines(fh, str(path))


def dump_skeleton_trajectory(frames: Sequence[SkeletonFrame], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for f in frames:
            rec = {"t": f.t, "keypoints": {k: v.tolist() for k, v in f.keypoints.items()}}
            if any(c != 1.0 for c in f.confidence.values()):
                rec["confidence"] = f.confidence
            fh.write(json.dumps(rec) + "\n")


# --------------------------------------------------------------------------- statistics


def keypoint_stats(frames: Sequence[SkeletonFrame], keypoint: str,
                   window: int = DEFAULT_WINDOW) -> tuple[UncertaintyEstimate, np.ndarray]:
    """Sample standard deviation (N-1) and mean of ``keypoint`` over the last ``window`` detections."""
    if window < 2:
        raise InsufficientFrames(f"window must hold at least 2 frames, got {window}")
    pts = [f.keypoints[keypoint] for f in frames if f.has(keypoint)][-window:]
    if len(pts) < 2:
        raise InsufficientFrames(f"{len(pts)} detections of {keypoint!r}; need at least 2")
    P = np.array(pts)
    # deviations from the first sample: a constant keypoint gives exactly zero
    dev = P - P[0]
    return UncertaintyEstimate(dev.std(axis=0, ddof=1), len(pts), keypoint), P[0] + dev.mean(axis=0)


def mean_frame(frames: Sequence[SkeletonFrame], window: int = DEFAULT_WINDOW) -> SkeletonFrame:
    """Frame whose keypoints are the windowed means of the last ``window`` frames.

    Stands in for the expected human configuration; a keypoint present in
    fewer than half of the window is left out.
    """
    recent = list(frames)[-window:]
    if not recent:
        raise InsufficientFrames("no frames to average")
    names = sorted({k for f in recent for k in f.keypoints})
    kps = {}
    for name in names:
        pts = [f.keypoints[name] for f in recent if f.has(name)]
        if 2 * len(pts) >= len(recent):
            kps[name] = pts[0] + np.mean(np.array(pts) - pts[0], axis=0)
    return SkeletonFrame(recent[-1].t, kps)


# --------------------------------------------------------------------------- goals


def nominal_goal(frame: SkeletonFrame, spec: DeliverySpec | None = None) -> Pose:
    """Delivery pose at the tracked keypoint plus the approach offset."""
    spec = spec or DeliverySpec()
    return Pose(frame.point(spec.keypoint) + spec.offset, spec.quat)


def adapt_goal(nominal: Pose, uncertainty: UncertaintyEstimate, params: GoalAdaptParams) -> Pose:
    """Push the delivery position along ``u_safe`` in proportion to the detection noise.

    The per-axis products ``scale * sigma`` multiply ``u_safe`` component by
    component; orientation is passed through untouched.
    """
    offset = params.scale * uncertainty.sigma * params.u_safe
    return Pose(nominal.p + offset, nominal.quat)


def human_capsules(frame: SkeletonFrame, radii: BodyRadii | None = None) -> CapsuleSet:
    """Nine-capsule body model built from one skeleton frame."""
    radii = radii or BodyRadii()
    missing = [k for k in CORE_KEYPOINTS if not frame.has(k)]
    if missing:
        raise MissingKeypoint(f"core keypoints missing: {', '.join(missing)}")
    P = frame.point
    rs, ls = P("right_shoulder"), P("left_shoulder")
    neck = P("neck") if frame.has("neck") else 0.5 * (rs + ls)
    head = P("head") if frame.has("head") else neck + np.array([0.0, 0.0, 0.2])
    pelvis = P("pelvis")

    def forearm(elbow, wrist):
        axis = wrist - elbow
        n = np.linalg.norm(axis)
        tip = wrist + (axis / n) * radii.hand_length if n > 1e-9 else wrist
        return Capsule(elbow, tip, radii.limb)

    trunk_dir = pelvis - neck
    n = np.linalg.norm(trunk_dir)
    trunk_dir = trunk_dir / n if n > 1e-9 else np.array([0.0, 0.0, -1.0])
    caps = [
        ("torso", Capsule(neck, pelvis, radii.torso)),
        ("head", Capsule(head, head, radii.head)),
        ("neck", Capsule(neck, head, radii.limb)),
        ("right_upper_arm", Capsule(rs, P("right_elbow"), radii.limb)),
        ("left_upper_arm", Capsule(ls, P("left_elbow"), radii.limb)),
        ("right_forearm", forearm(P("right_elbow"), P("right_wrist"))),
        ("left_forearm", forearm(P("left_elbow"), P("left_wrist"))),
    ]
    # no leg keypoints: thighs hang from the hips along the trunk axis
    for side, shoulder in (("right", rs), ("left", ls)):
        hip = pelvis + 0.5 * (shoulder - neck) - 0.5 * np.dot(shoulder - neck, trunk_dir) * trunk_dir
        caps.append((f"{side}_thigh", Capsule(hip, hip + radii.thigh_length * trunk_dir, radii.limb)))
    return CapsuleSet([c for _, c in caps], [name for name, _ in caps])
