"""Motion data types, the canonical skeleton, and the motion file format.

The canonical motion file is a JSON document::

    {
      "format": "atomotion-motion",
      "version": 1,
      "fps": 20.0,
      "skeleton": {
        "joint_names": ["pelvis", ...],
        "parents": [-1, 0, ...],
        "body_parts": {"pelvis": "trajectory", ...}
      },
      "frames": [[[x, y, z], ...], ...]
    }

``frames`` is F x J x 3, row-major, in meters, world frame, +Y up.  Numbers
are written with the shortest repr that round-trips a float64, so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateOutput,
    InvalidSkeleton,
    JointCountMismatch,
    MalformedHeader,
    NonFiniteCoordinate,
)

FORMAT_NAME = "atomotion-motion"
FORMAT_VERSION = 1

BODY_PARTS = (
    "spine",
    "left_upper_limb",
    "right_upper_limb",
    "left_lower_limb",
    "right_lower_limb",
    "trajectory",
)


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]          # root has parent -1
    body_parts: tuple[str, ...]       # one label from BODY_PARTS per joint

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "body_parts", tuple(self.body_parts))
        J = len(self.joint_names)
        if J == 0:
            raise InvalidSkeleton("skeleton has no joints")
        if len(set(self.joint_names)) != J:
            raise InvalidSkeleton("joint names must be unique")
        if len(self.parents) != J or len(self.body_parts) != J:
            raise InvalidSkeleton("parents and body_parts must have one entry per joint")
        roots = [j for j, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise InvalidSkeleton(f"expected exactly one root, found {len(roots)}")
        for j, p in enumerate(self.parents):
            if p != -1 and not 0 <= p < J:
                raise InvalidSkeleton(f"joint {self.joint_names[j]!r} has parent index {p} out of range")
        # every joint must reach the root without revisiting a joint
        for j in range(J):
            seen = set()
            k = j
            while k != -1:
                if k in seen:
                    raise InvalidSkeleton(f"cycle through joint {self.joint_names[k]!r}")
                seen.add(k)
                k = self.parents[k]
        for name, part in zip(self.joint_names, self.body_parts):
            if part not in BODY_PARTS:
                raise InvalidSkeleton(f"joint {name!r} has unknown body part {part!r}")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    @property
    def body_part_map(self) -> dict[str, str]:
        return dict(zip(self.joint_names, self.body_parts))

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise InvalidSkeleton(f"unknown joint {name!r}") from None

    def joints_of(self, part: str) -> list[str]:
        return [n for n, p in zip(self.joint_names, self.body_parts) if p == part]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "body_parts": self.body_part_map,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        names = d["joint_names"]
        parts_map = d["body_parts"]
        missing = [n for n in names if n not in parts_map]
        if missing:
            raise InvalidSkeleton(f"body_parts does not cover joints {missing}")
        return cls(tuple(names), tuple(d["parents"]), tuple(parts_map[n] for n in names))


# HumanML3D joint order; +Y up, the body faces +Z and its left side is +X.
_CANONICAL = [
    ("pelvis", -1, "trajectory"),
    ("left_hip", 0, "left_lower_limb"),
    ("right_hip", 0, "right_lower_limb"),
    ("spine1", 0, "spine"),
    ("left_knee", 1, "left_lower_limb"),
    ("right_knee", 2, "right_lower_limb"),
    ("spine2", 3, "spine"),
    ("left_ankle", 4, "left_lower_limb"),
    ("right_ankle", 5, "right_lower_limb"),
    ("spine3", 6, "spine"),
    ("left_foot", 7, "left_lower_limb"),
    ("right_foot", 8, "right_lower_limb"),
    ("neck", 9, "spine"),
    ("left_collar", 9, "left_upper_limb"),
    ("right_collar", 9, "right_upper_limb"),
    ("head", 12, "spine"),
    ("left_shoulder", 13, "left_upper_limb"),
    ("right_shoulder", 14, "right_upper_limb"),
    ("left_elbow", 16, "left_upper_limb"),
    ("right_elbow", 17, "right_upper_limb"),
    ("left_wrist", 18, "left_upper_limb"),
    ("right_wrist", 19, "right_upper_limb"),
]

CANONICAL_SKELETON = Skeleton(
    tuple(n for n, _, _ in _CANONICAL),
    tuple(p for _, p, _ in _CANONICAL),
    tuple(b for _, _, b in _CANONICAL),
)

# T-pose offsets relative to the parent joint, meters.
CANONICAL_OFFSETS = np.array([
    [0.0, 0.95, 0.0],      # pelvis (absolute)
    [0.09, -0.05, 0.0],    # left_hip
    [-0.09, -0.05, 0.0],   # right_hip
    [0.0, 0.10, 0.0],      # spine1
    [0.0, -0.40, 0.0],     # left_knee
    [0.0, -0.40, 0.0],     # right_knee
    [0.0, 0.13, 0.0],      # spine2
    [0.0, -0.40, 0.0],     # left_ankle
    [0.0, -0.40, 0.0],     # right_ankle
    [0.0, 0.05, 0.0],      # spine3
    [0.0, -0.05, 0.12],    # left_foot
    [0.0, -0.05, 0.12],    # right_foot
    [0.0, 0.20, 0.0],      # neck
    [0.07, 0.12, 0.0],     # left_collar
    [-0.07, 0.12, 0.0],    # right_collar
    [0.0, 0.10, 0.03],     # head
    [0.12, 0.0, 0.0],      # left_shoulder
    [-0.12, 0.0, 0.0],     # right_shoulder
    [0.26, 0.0, 0.0],      # left_elbow
    [-0.26, 0.0, 0.0],     # right_elbow
    [0.25, 0.0, 0.0],      # left_wrist
    [-0.25, 0.0, 0.0],     # right_wrist
])


def canonical_rest_pose() -> np.ndarray:
    """World positions (J x 3) of the canonical skeleton in its T-pose."""
    pos = np.zeros((CANONICAL_SKELETON.num_joints, 3))
    for j, p in enumerate(CANONICAL_SKELETON.parents):
        pos[j] = CANONICAL_OFFSETS[j] if p == -1 else pos[p] + CANONICAL_OFFSETS[j]
    return pos


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """F x J x 3 joint positions sampled at ``fps`` Hz."""

    fps: float
    frames: np.ndarray
    skeleton: Skeleton = CANONICAL_SKELETON

    def __post_init__(self):
        fps = float(self.fps)
        if not math.isfinite(fps) or fps <= 0:
            raise MalformedHeader(f"fps must be a positive number, got {self.fps!r}")
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise MalformedHeader(f"frames must have shape (F, J, 3), got {frames.shape}")
        if frames.shape[0] < 2:
            raise MalformedHeader(f"a motion needs at least 2 frames, got {frames.shape[0]}")
        if frames.shape[1] != self.skeleton.num_joints:
            raise JointCountMismatch(
                f"frames have {frames.shape[1]} joints, skeleton has {self.skeleton.num_joints}")
        bad = ~np.isfinite(frames).all(axis=(1, 2))
        if bad.any():
            raise NonFiniteCoordinate(int(np.argmax(bad)))
        frames.setflags(write=False)
        object.__setattr__(self, "fps", fps)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    def joint(self, name: str) -> np.ndarray:
        """Trajectory (F x 3) of one joint."""
        return self.frames[:, self.skeleton.index(name)]

    def root_trajectory(self) -> np.ndarray:
        return self.frames[:, self.skeleton.root]


@dataclass(frozen=True, eq=False)
class MotionItem:
    motion: MotionSequence
    raw_text: str | None = None
    atomic: object | None = None     # AtomicTextMatrix, kept untyped to avoid a cycle


@dataclass(frozen=True, eq=False)
class MotionDataset:
    items: tuple[MotionItem, ...] = field(default_factory=tuple)

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise ValueError("a motion dataset needs at least one item")
        skel = items[0].motion.skeleton
        for i, it in enumerate(items):
            if it.motion.skeleton != skel:
                raise InvalidSkeleton(f"item {i} uses a different skeleton")
        object.__setattr__(self, "items", items)

    @classmethod
    def of(cls, motions: Iterable[MotionSequence], texts: Sequence[str | None] | None = None):
        motions = list(motions)
        texts = list(texts) if texts is not None else [None] * len(motions)
        return cls(tuple(MotionItem(m, t) for m, t in zip(motions, texts)))

    @property
    def skeleton(self) -> Skeleton:
        return self.items[0].motion.skeleton

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def motions(self) -> list[MotionSequence]:
        return [it.motion for it in self.items]


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def _read_source(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _require(doc: dict, key: str):
    if key not in doc:
        raise MalformedHeader(f"missing field {key!r}")
    return doc[key]


def load_motion(source, skeleton: Skeleton | None = None) -> MotionSequence:
    """Parse a canonical motion document.

    ``source`` may be bytes, a str, or a readable file object.  When
    ``skeleton`` is given the file's joint count must match it.
    """
    try:
        doc = json.loads(_read_source(source))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"not a JSON document: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedHeader("top level must be an object")
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise MalformedHeader(f"field 'format': expected {FORMAT_NAME!r}, got {doc['format']!r}")
    if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise MalformedHeader(f"field 'version': unsupported version {doc['version']!r}")

    fps = _require(doc, "fps")
    if isinstance(fps, bool) or not isinstance(fps, (int, float)) or not fps > 0 or not math.isfinite(fps):
        raise MalformedHeader(f"field 'fps': expected a positive number, got {fps!r}")

    skel_doc = _require(doc, "skeleton")
    try:
        file_skel = Skeleton.from_dict(skel_doc)
    except (KeyError, TypeError) as exc:
        raise MalformedHeader(f"field 'skeleton': missing or invalid entry {exc}") from None
    J = file_skel.num_joints
    if skeleton is not None and skeleton.num_joints != J:
        raise JointCountMismatch(
            f"file skeleton has {J} joints, expected {skeleton.num_joints}")

    frames = _require(doc, "frames")
    if not isinstance(frames, list):
        raise MalformedHeader("field 'frames': expected a list of frames")
    for f, frame in enumerate(frames):
        if not isinstance(frame, list):
            raise MalformedHeader(f"field 'frames': frame {f} is not a list")
        if len(frame) != J:
            raise JointCountMismatch(f"frame {f} has {len(frame)} joints, skeleton has {J}")
        for j, p in enumerate(frame):
            if not isinstance(p, list) or len(p) != 3 or not all(
                    isinstance(c, (int, float)) and not isinstance(c, bool) for c in p):
                raise MalformedHeader(f"field 'frames': frame {f} joint {j} is not an [x, y, z] triple")
    arr = np.array(frames, dtype=np.float64).reshape(len(frames), J, 3)
    return MotionSequence(float(fps), arr, skeleton if skeleton is not None else file_skel)


def save_motion(motion: MotionSequence) -> bytes:
    """Serialize to the canonical document (UTF-8 bytes)."""
    out = io.StringIO()
    out.write("{\n")
    out.write(f'  "format": {json.dumps(FORMAT_NAME)},\n')
    out.write(f'  "version": {FORMAT_VERSION},\n')
    out.write(f'  "fps": {json.dumps(motion.fps)},\n')
    out.write(f'  "skeleton": {json.dumps(motion.skeleton.to_dict())},\n')
    out.write('  "frames": [\n')
    rows = [json.dumps(frame) for frame in motion.frames.tolist()]
    out.write(",\n".join("    " + r for r in rows))
    out.write("\n  ]\n}\n")
    return out.getvalue().encode("utf-8")


def read_motion(path: str | os.PathLike, skeleton: Skeleton | None = None) -> MotionSequence:
    with open(path, "rb") as fh:
        return load_motion(fh, skeleton)


def write_motion(path: str | os.PathLike, motion: MotionSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(save_motion(motion))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample(motion: MotionSequence, target_fps: float) -> MotionSequence:
    """Linearly interpolate joint positions onto a ``target_fps`` grid.

    Output frame k sits at time k / target_fps; the frame count is
    round(F * target_fps / fps).  Times past the last input frame hold the
    last pose.
    """
    if not target_fps > 0:
        raise ValueError(f"target_fps must be positive, got {target_fps!r}")
    if target_fps == motion.fps:
        return motion
    F = motion.num_frames
    F_out = int(math.floor(F * target_fps / motion.fps + 0.5))
    if F_out < 2:
        raise DegenerateOutput(f"resampling {F} frames to {target_fps} Hz leaves {F_out} frame(s)")
    # fractional source index of each output frame
    u = np.arange(F_out) * (motion.fps / target_fps)
    u = np.minimum(u, F - 1)
    i0 = np.minimum(np.floor(u).astype(int), F - 2)
    w = (u - i0)[:, None, None]
    src = motion.frames
    out = (1.0 - w) * src[i0] + w * src[i0 + 1]
    return MotionSequence(float(target_fps), out, motion.skeleton)
