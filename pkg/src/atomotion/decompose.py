"""Rule-based fine-grained description of a motion.

Four stages turn joint positions into short behaviour phrases:

1. per-frame pose descriptors (limb-bend cosine, distances, heights, root
   displacement and facing);
2. each descriptor track is cut into maximal runs of same-signed frame
   deltas, and each run is summarised by its signed intensity change and
   mean speed (a :class:`ClipDescriptor`);
3. clips are binned into ``P`` equal time periods by start frame;
4. each clip is rendered as ``"<behavior> <magnitude> <speed>"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateJoints, InsufficientData
from .motion import BODY_PARTS, MotionDataset, MotionSequence, Skeleton

KINDS = ("angle", "distance", "height", "displacement", "orientation")
ARITY = {"angle": 3, "distance": 2, "height": 1, "displacement": 1, "orientation": 2}
UNITS = {
    "angle": "cosine",
    "distance": "meters",
    "height": "meters",
    "displacement": "meters",
    "orientation": "radians",
}
UP = 1                 # +Y is vertical
HORIZONTAL = (0, 2)
DEGENERATE_NORM = 1e-9

DEFAULT_PERIODS = 4


@dataclass(frozen=True)
class DescriptorDef:
    id: str
    kind: str
    joints: tuple[str, ...]
    body_part: str

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if len(self.joints) != ARITY[self.kind]:
            raise ValueError(
                f"{self.id}: {self.kind} descriptors take {ARITY[self.kind]} joints, got {len(self.joints)}")
        if self.body_part not in BODY_PARTS:
            raise ValueError(f"{self.id}: unknown body part {self.body_part!r}")

    @property
    def unit(self) -> str:
        return UNITS[self.kind]

    def check(self, skeleton: Skeleton) -> list[int]:
        return [skeleton.index(j) for j in self.joints]


DEFAULT_DESCRIPTORS: tuple[DescriptorDef, ...] = (
    DescriptorDef("left_elbow_angle", "angle", ("left_shoulder", "left_elbow", "left_wrist"), "left_upper_limb"),
    DescriptorDef("right_elbow_angle", "angle", ("right_shoulder", "right_elbow", "right_wrist"), "right_upper_limb"),
    DescriptorDef("left_knee_angle", "angle", ("left_hip", "left_knee", "left_ankle"), "left_lower_limb"),
    DescriptorDef("right_knee_angle", "angle", ("right_hip", "right_knee", "right_ankle"), "right_lower_limb"),
    DescriptorDef("spine_bend", "angle", ("pelvis", "spine2", "neck"), "spine"),
    DescriptorDef("left_wrist_height", "height", ("left_wrist",), "left_upper_limb"),
    DescriptorDef("right_wrist_height", "height", ("right_wrist",), "right_upper_limb"),
    DescriptorDef("left_ankle_height", "height", ("left_ankle",), "left_lower_limb"),
    DescriptorDef("right_ankle_height", "height", ("right_ankle",), "right_lower_limb"),
    # bilateral distances are filed under the left-side part
    DescriptorDef("wrist_distance", "distance", ("left_wrist", "right_wrist"), "left_upper_limb"),
    DescriptorDef("ankle_distance", "distance", ("left_ankle", "right_ankle"), "left_lower_limb"),
    DescriptorDef("root_displacement", "displacement", ("pelvis",), "trajectory"),
    DescriptorDef("root_orientation", "orientation", ("left_hip", "right_hip"), "trajectory"),
)


@dataclass(frozen=True, eq=False)
class DescriptorTrack:
    defn: DescriptorDef
    values: np.ndarray


@dataclass(frozen=True)
class ClipDescriptor:
    start: int
    length: int
    intensity: float
    velocity: float

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("clip length must be at least 1")
        if self.velocity != abs(self.intensity) / self.length:
            raise ValueError("velocity must equal |intensity| / length")

    @classmethod
    def from_run(cls, start: int, length: int, intensity: float) -> "ClipDescriptor":
        return cls(int(start), int(length), float(intensity), abs(float(intensity)) / int(length))


@dataclass(frozen=True)
class DescriptionEntry:
    descriptor: str
    phrase: str
    clip: ClipDescriptor

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor,
            "phrase": self.phrase,
            "start": self.clip.start,
            "length": self.clip.length,
            "intensity": self.clip.intensity,
            "velocity": self.clip.velocity,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DescriptionEntry":
        clip = ClipDescriptor(int(d["start"]), int(d["length"]), float(d["intensity"]), float(d["velocity"]))
        return cls(d["descriptor"], d["phrase"], clip)


@dataclass(frozen=True)
class FineGrainedDescription:
    """P time periods, each a list of co-occurring clip phrases."""

    periods: tuple[tuple[DescriptionEntry, ...], ...]

    @property
    def P(self) -> int:
        return len(self.periods)

    def is_empty(self) -> bool:
        return all(len(p) == 0 for p in self.periods)

    def to_dict(self) -> dict:
        return {str(i): [e.to_dict() for e in period] for i, period in enumerate(self.periods)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FineGrainedDescription":
        keys = sorted(d, key=int)
        if [int(k) for k in keys] != list(range(len(keys))):
            raise ValueError("period keys must be consecutive integers from 0")
        return cls(tuple(tuple(DescriptionEntry.from_dict(e) for e in d[k]) for k in keys))


@dataclass(frozen=True)
class KindThresholds:
    magnitude_lo: float
    magnitude_hi: float
    speed_lo: float
    speed_hi: float
    deadband: float = 0.0

    def __post_init__(self):
        if self.magnitude_lo > self.magnitude_hi or self.speed_lo > self.speed_hi:
            raise ValueError("thresholds need lo <= hi")
        if self.deadband < 0:
            raise ValueError("deadband must be non-negative")


@dataclass(frozen=True)
class ConversionThresholds:
    by_kind: Mapping[str, KindThresholds] = field(default_factory=dict)

    def for_kind(self, kind: str) -> KindThresholds:
        try:
            return self.by_kind[kind]
        except KeyError:
            raise KeyError(f"no thresholds for descriptor kind {kind!r}") from None

    def to_dict(self) -> dict:
        return {k: vars(t).copy() for k, t in sorted(self.by_kind.items())}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConversionThresholds":
        return cls({k: KindThresholds(**v) for k, v in d.items()})


# Desk-scale defaults; `calibrate_thresholds` derives data-driven ones.
DEFAULT_THRESHOLDS = ConversionThresholds({
    "angle": KindThresholds(0.1, 0.4, 0.01, 0.04, 1e-3),
    "distance": KindThresholds(0.05, 0.2, 0.005, 0.02, 1e-3),
    "height": KindThresholds(0.05, 0.2, 0.005, 0.02, 1e-3),
    "displacement": KindThresholds(0.1, 0.5, 0.01, 0.05, 1e-3),
    "orientation": KindThresholds(0.2, 0.8, 0.02, 0.08, 1e-3),
})


# ---------------------------------------------------------------------------
# pose extraction
# ---------------------------------------------------------------------------

def angle_descriptor(a, b, c) -> float:
    """Cosine of the angle at ``b`` between the segments towards ``a`` and ``c``.

    -1 for a straight limb, 0 at a right angle, +1 when fully folded.
    """
    a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))
    u = a - b
    v = c - b
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        raise DegenerateJoints("coincident joints in angle descriptor")
    return float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))


def _angle_track(a: np.ndarray, b: np.ndarray, c: np.ndarray, name: str) -> np.ndarray:
    u = a - b
    v = c - b
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    bad = (nu < DEGENERATE_NORM) | (nv < DEGENERATE_NORM)
    if bad.any():
        raise DegenerateJoints(f"coincident joints in {name}", frame=int(np.argmax(bad)))
    cos = np.einsum("ij,ij->i", u / nu[:, None], v / nv[:, None])
    return np.clip(cos, -1.0, 1.0)


def _facing_track(left: np.ndarray, right: np.ndarray, name: str) -> np.ndarray:
    axis = left - right
    x, z = axis[:, HORIZONTAL[0]], axis[:, HORIZONTAL[1]]
    bad = np.hypot(x, z) < DEGENERATE_NORM
    if bad.any():
        raise DegenerateJoints(f"vertical hip axis in {name}", frame=int(np.argmax(bad)))
    # angle of the hip axis about +Y; increases as the body turns to its left
    return np.unwrap(np.arctan2(-z, x))


def pose_descriptors(motion: MotionSequence,
                     defs: Sequence[DescriptorDef] = DEFAULT_DESCRIPTORS) -> list[DescriptorTrack]:
    skel = motion.skeleton
    X = motion.frames
    root = X[:, skel.root]
    tracks = []
    for d in defs:
        idx = d.check(skel)
        if d.kind == "angle":
            vals = _angle_track(X[:, idx[0]], X[:, idx[1]], X[:, idx[2]], d.id)
        elif d.kind == "distance":
            vals = np.linalg.norm(X[:, idx[0]] - X[:, idx[1]], axis=1)
        elif d.kind == "height":
            vals = X[:, idx[0], UP] - root[:, UP]
        elif d.kind == "displacement":
            h = X[:, idx[0]][:, HORIZONTAL] - X[0, idx[0]][list(HORIZONTAL)]
            vals = np.hypot(h[:, 0], h[:, 1])
        else:
            vals = _facing_track(X[:, idx[0]], X[:, idx[1]], d.id)
        vals = np.ascontiguousarray(vals, dtype=np.float64)
        vals.setflags(write=False)
        tracks.append(DescriptorTrack(d, vals))
    return tracks


# ---------------------------------------------------------------------------
# pose aggregation
# ---------------------------------------------------------------------------

def run_bounds(deltas: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) spans of maximal constant-sign runs.

    Zero deltas join the run they sit in; leading zeros join the first run.
    """
    n = len(deltas)
    sign = np.sign(deltas)
    nz = np.flatnonzero(sign)
    if nz.size == 0:
        return [(0, n)]
    last = np.maximum.accumulate(np.where(sign != 0, np.arange(n), -1))
    last[last < 0] = nz[0]
    filled = sign[last]
    cuts = (np.flatnonzero(filled[1:] != filled[:-1]) + 1).tolist()
    starts = [0] + cuts
    ends = cuts + [n]
    return list(zip(starts, ends))


def aggregate_runs(track, deadband: float = 0.0) -> list[ClipDescriptor]:
    """Summarise a descriptor track as consecutive same-sign clips.

    Frame deltas smaller than ``deadband`` in magnitude are zeroed before
    the sign runs are formed.
    """
    values = track.values if isinstance(track, DescriptorTrack) else np.asarray(track, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise ValueError("a track needs at least 2 frames")
    deltas = np.diff(values)
    if deadband > 0:
        deltas = np.where(np.abs(deltas) < deadband, 0.0, deltas)
    return [
        ClipDescriptor.from_run(s, e - s, math.fsum(deltas[s:e].tolist()))
        for s, e in run_bounds(deltas)
    ]


# ---------------------------------------------------------------------------
# clip aggregation
# ---------------------------------------------------------------------------

def bin_index(start: int, num_frames: int, periods: int) -> int:
    if not 0 <= start < num_frames:
        raise ValueError(f"clip start {start} outside [0, {num_frames})")
    return (int(start) * int(periods)) // int(num_frames)


def bin_clips(clips: Iterable[ClipDescriptor], num_frames: int, periods: int) -> list[list[ClipDescriptor]]:
    """Assign each clip to period floor(start * P / F); empty periods are kept."""
    if periods < 1:
        raise ValueError("periods must be >= 1")
    bins: list[list[ClipDescriptor]] = [[] for _ in range(periods)]
    for clip in clips:
        bins[bin_index(clip.start, num_frames, periods)].append(clip)
    return bins


# ---------------------------------------------------------------------------
# description conversion
# ---------------------------------------------------------------------------

BEHAVIORS = {
    # (negative intensity, positive intensity)
    "angle": ("bending", "extending"),
    "distance": ("moving together", "moving apart"),
    "height": ("lowering", "raising"),
    "displacement": ("returning", "advancing"),
    "orientation": ("turning right", "turning left"),
}
MAGNITUDES = ("slightly", "moderately", "significantly")
SPEEDS = ("slowly", "steadily", "quickly")


def _level(x: float, lo: float, hi: float) -> int:
    if x > hi:
        return 2
    if x < lo:
        return 0
    return 1


def convert_description(clip: ClipDescriptor, defn: DescriptorDef, thresholds: ConversionThresholds) -> str:
    S = clip.intensity
    if S == 0:
        return "holding still"
    t = thresholds.for_kind(defn.kind)
    if defn.kind == "displacement" and abs(S) < t.deadband:
        return "stationary"
    behavior = BEHAVIORS[defn.kind][S > 0]
    magnitude = MAGNITUDES[_level(abs(S), t.magnitude_lo, t.magnitude_hi)]
    speed = SPEEDS[_level(clip.velocity, t.speed_lo, t.speed_hi)]
    return f"{behavior} {magnitude} {speed}"


def decompose(motion: MotionSequence,
              defs: Sequence[DescriptorDef] = DEFAULT_DESCRIPTORS,
              thresholds: ConversionThresholds = DEFAULT_THRESHOLDS,
              periods: int = DEFAULT_PERIODS) -> FineGrainedDescription:
    F = motion.num_frames
    bins: list[list[DescriptionEntry]] = [[] for _ in range(periods)]
    for track in pose_descriptors(motion, defs):
        d = track.defn
        for clip in aggregate_runs(track, thresholds.for_kind(d.kind).deadband):
            entry = DescriptionEntry(d.id, convert_description(clip, d, thresholds), clip)
            bins[bin_index(clip.start, F, periods)].append(entry)
    return FineGrainedDescription(tuple(tuple(b) for b in bins))


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------

MIN_CALIBRATION_CLIPS = 10


def thresholds_from_samples(abs_intensity, velocity, abs_delta) -> KindThresholds:
    """33rd/66th percentiles of |S| and V, 1st percentile of |delta|."""
    s = np.asarray(abs_intensity, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    if len(s) < MIN_CALIBRATION_CLIPS:
        raise InsufficientData(f"need at least {MIN_CALIBRATION_CLIPS} clips, got {len(s)}")
    s_lo, s_hi = np.percentile(s, [33, 66])
    v_lo, v_hi = np.percentile(v, [33, 66])
    eps = float(np.percentile(np.asarray(abs_delta, dtype=np.float64), 1)) if len(abs_delta) else 0.0
    return KindThresholds(float(s_lo), float(s_hi), float(v_lo), float(v_hi), eps)


def calibrate_thresholds(dataset: MotionDataset | Iterable[MotionSequence],
                         defs: Sequence[DescriptorDef] = DEFAULT_DESCRIPTORS) -> ConversionThresholds:
    """Data-driven thresholds, pooled per descriptor kind over every clip.

    Clips are formed with a zero deadband since the deadband is itself an
    output of calibration.
    """
    motions = dataset.motions() if isinstance(dataset, MotionDataset) else list(dataset)
    if not motions:
        raise InsufficientData("calibration dataset is empty")
    pooled: dict[str, tuple[list, list, list]] = {}
    for m in motions:
        for track in pose_descriptors(m, defs):
            s, v, dl = pooled.setdefault(track.defn.kind, ([], [], []))
            dl.extend(np.abs(np.diff(track.values)).tolist())
            for clip in aggregate_runs(track, 0.0):
                s.append(abs(clip.intensity))
                v.append(clip.velocity)
    out = {}
    for kind in sorted(pooled):
        s, v, dl = pooled[kind]
        if len(s) < MIN_CALIBRATION_CLIPS:
            raise InsufficientData(f"descriptor kind {kind!r} has only {len(s)} clips (need {MIN_CALIBRATION_CLIPS})")
        out[kind] = thresholds_from_samples(s, v, dl)
    return ConversionThresholds(out)
