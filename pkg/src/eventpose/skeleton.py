"""Analytic 16-joint body model and parametric motions.

The skeleton lives in the device (head camera) frame: the camera sits at
the origin looking along -Z, so the body hangs below it with increasingly
negative z toward the feet. Joint trajectories are sums of sinusoids,
hence smooth and exactly periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

JOINT_NAMES = (
    "head", "neck",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
    "left_foot", "right_foot",
)
NUM_JOINTS = 16
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# Kinematic tree as (parent, child) name pairs; 15 bones spanning all joints.
BONES = (
    ("neck", "head"),
    ("neck", "left_shoulder"), ("neck", "right_shoulder"),
    ("left_shoulder", "left_elbow"), ("right_shoulder", "right_elbow"),
    ("left_elbow", "left_wrist"), ("right_elbow", "right_wrist"),
    ("neck", "left_hip"), ("neck", "right_hip"),
    ("left_hip", "left_knee"), ("right_hip", "right_knee"),
    ("left_knee", "left_ankle"), ("right_knee", "right_ankle"),
    ("left_ankle", "left_foot"), ("right_ankle", "right_foot"),
)
BONE_INDICES = tuple((JOINT_INDEX[a], JOINT_INDEX[b]) for a, b in BONES)


@dataclass(frozen=True)
class Skeleton16:
    """16 joints in meters, device frame, fixed name order."""

    joints: np.ndarray  # (16, 3) float64

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.shape != (NUM_JOINTS, 3):
            raise ValueError(f"expected (16, 3) joints, got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("joints must be finite")
        object.__setattr__(self, "joints", j)

    def joint(self, name: str) -> np.ndarray:
        return self.joints[JOINT_INDEX[name]]

    def bone_lengths(self) -> np.ndarray:
        a = self.joints[[i for i, _ in BONE_INDICES]]
        b = self.joints[[j for _, j in BONE_INDICES]]
        return np.linalg.norm(b - a, axis=1)

    def validate(self) -> "Skeleton16":
        if np.any(self.bone_lengths() <= 0):
            raise ValueError("degenerate bone of zero length")
        return self


# Rest pose: camera at origin looking along -Z, body below it.
_BASE_POSE = np.array([
    [0.00, 0.08, -0.12],   # head
    [0.00, 0.10, -0.22],   # neck
    [-0.20, 0.10, -0.26], [0.20, 0.10, -0.26],   # shoulders
    [-0.26, 0.12, -0.52], [0.26, 0.12, -0.52],   # elbows
    [-0.28, 0.16, -0.78], [0.28, 0.16, -0.78],   # wrists
    [-0.11, 0.10, -0.72], [0.11, 0.10, -0.72],   # hips
    [-0.12, 0.14, -1.12], [0.12, 0.14, -1.12],   # knees
    [-0.13, 0.10, -1.52], [0.13, 0.10, -1.52],   # ankles
    [-0.13, 0.26, -1.58], [0.13, 0.26, -1.58],   # feet
], dtype=np.float64)

DEFAULT_PERIODS = {
    "still": 1.0,
    "wave": 1.0,
    "box": 0.8,
    "squat": 1.5,
    "walk-in-place": 1.0,
}
MOTIONS = tuple(DEFAULT_PERIODS)


def base_pose() -> np.ndarray:
    return _BASE_POSE.copy()


def _offsets_still(phase: float) -> dict:
    return {}


def _offsets_wave(phase: float) -> dict:
    s, c = math.sin(phase), math.cos(phase)
    return {
        "right_elbow": (0.06, 0.04, 0.34),
        "right_wrist": (0.12 + 0.12 * s, 0.06, 0.62 + 0.05 * c),
    }


def _offsets_box(phase: float) -> dict:
    ul = 0.5 * (1.0 + math.sin(phase))
    ur = 0.5 * (1.0 - math.sin(phase))
    return {
        "left_elbow": (0.02 * ul, 0.08 * ul, 0.05 * ul),
        "right_elbow": (-0.02 * ur, 0.08 * ur, 0.05 * ur),
        "left_wrist": (0.04 * ul, 0.16 * ul, 0.10 * ul),
        "right_wrist": (-0.04 * ur, 0.16 * ur, 0.10 * ur),
    }


def _offsets_squat(phase: float) -> dict:
    h = 0.5 * (1.0 - math.cos(phase))
    return {
        "left_hip": (0.0, 0.04 * h, 0.10 * h),
        "right_hip": (0.0, 0.04 * h, 0.10 * h),
        "left_knee": (0.0, 0.10 * h, 0.16 * h),
        "right_knee": (0.0, 0.10 * h, 0.16 * h),
        "left_ankle": (0.0, 0.02 * h, 0.20 * h),
        "right_ankle": (0.0, 0.02 * h, 0.20 * h),
        "left_foot": (0.0, 0.02 * h, 0.20 * h),
        "right_foot": (0.0, 0.02 * h, 0.20 * h),
    }


def _offsets_walk(phase: float) -> dict:
    s = math.sin(phase)
    ul = 0.5 * (1.0 + s)
    ur = 0.5 * (1.0 - s)
    return {
        "left_knee": (0.0, 0.05 * ul, 0.12 * ul),
        "left_ankle": (0.0, 0.02 * ul, 0.18 * ul),
        "left_foot": (0.0, -0.04 * ul, 0.18 * ul),
        "right_knee": (0.0, 0.05 * ur, 0.12 * ur),
        "right_ankle": (0.0, 0.02 * ur, 0.18 * ur),
        "right_foot": (0.0, -0.04 * ur, 0.18 * ur),
        "left_wrist": (0.0, 0.06 * (ur - 0.5), 0.0),
        "right_wrist": (0.0, 0.06 * (ul - 0.5), 0.0),
    }


_MOTION_FUNCS = {
    "still": _offsets_still,
    "wave": _offsets_wave,
    "box": _offsets_box,
    "squat": _offsets_squat,
    "walk-in-place": _offsets_walk,
}


def animate(motion: str, t: float, period: float | None = None) -> Skeleton16:
    """Pose of the named motion at time t seconds."""
    if motion not in _MOTION_FUNCS:
        raise ValueError(f"unknown motion {motion!r}; choices: {', '.join(MOTIONS)}")
    if t < 0:
        raise ValueError("time must be non-negative")
    if period is None:
        period = DEFAULT_PERIODS[motion]
    if period <= 0:
        raise ValueError("period must be positive")
    phase = 2.0 * math.pi * t / period
    joints = _BASE_POSE.copy()
    for name, off in _MOTION_FUNCS[motion](phase).items():
        joints[JOINT_INDEX[name]] += off
    return Skeleton16(joints).validate()
