"""Procedural motions on the canonical skeleton.

Each generator drives a handful of local joint rotations with smooth
periodic curves and runs forward kinematics from the T-pose offsets.
They stand in for captured data in tests, fixtures and demos.
"""
from __future__ import annotations

import numpy as np

from .motion import CANONICAL_OFFSETS, CANONICAL_SKELETON, MotionSequence

J = CANONICAL_SKELETON.num_joints
_IDX = {n: i for i, n in enumerate(CANONICAL_SKELETON.joint_names)}


def rotation(axis: str, angle) -> np.ndarray:
    """Rotation matrices about a principal axis, broadcast over ``angle``."""
    a = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    if axis == "x":
        m = [[o, z, z], [z, c, -s], [z, s, c]]
    elif axis == "y":
        m = [[c, z, s], [z, o, z], [-s, z, c]]
    else:
        m = [[c, -s, z], [s, c, z], [z, z, o]]
    return np.moveaxis(np.array(m), (0, 1), (-2, -1))


def forward_kinematics(local: np.ndarray, root_pos: np.ndarray, root_yaw: np.ndarray) -> np.ndarray:
    """F x J x 3 positions from F x J x 3 x 3 local rotations."""
    F = len(root_pos)
    world = np.empty((F, J, 3, 3))
    pos = np.empty((F, J, 3))
    for j, p in enumerate(CANONICAL_SKELETON.parents):
        if p == -1:
            world[:, j] = rotation("y", root_yaw) @ local[:, j]
            pos[:, j] = root_pos
        else:
            world[:, j] = world[:, p] @ local[:, j]
            pos[:, j] = pos[:, p] + world[:, p] @ CANONICAL_OFFSETS[j]
    return pos


class _Pose:
    def __init__(self, frames: int):
        self.local = np.broadcast_to(np.eye(3), (frames, J, 3, 3)).copy()

    def turn(self, joint: str, axis: str, angle) -> None:
        j = _IDX[joint]
        self.local[:, j] = self.local[:, j] @ rotation(axis, np.broadcast_to(angle, len(self.local)))


def _arms_down(pose: _Pose, left=1.3, right=1.3) -> None:
    pose.turn("left_shoulder", "z", -np.asarray(left))
    pose.turn("right_shoulder", "z", np.asarray(right))


def _finish(pose, root_pos, root_yaw, fps, rng, noise):
    frames = forward_kinematics(pose.local, root_pos, root_yaw)
    if noise:
        frames = frames + rng.normal(scale=noise, size=frames.shape)
    return MotionSequence(fps, frames)


def walk(frames=80, fps=20.0, speed=1.0, stride=0.45, seed=0, noise=0.0) -> MotionSequence:
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / fps
    phase = 2 * np.pi * 1.0 * t + rng.uniform(0, 2 * np.pi)
    pose = _Pose(frames)
    swing = stride * np.sin(phase)
    pose.turn("left_hip", "x", -swing)
    pose.turn("right_hip", "x", swing)
    pose.turn("left_knee", "x", 0.5 * np.clip(np.sin(phase + 1.2), 0, None) + 0.05)
    pose.turn("right_knee", "x", 0.5 * np.clip(-np.sin(phase + 1.2), 0, None) + 0.05)
    _arms_down(pose)
    pose.turn("left_shoulder", "x", 0.4 * np.sin(phase))
    pose.turn("right_shoulder", "x", -0.4 * np.sin(phase))
    pose.turn("left_elbow", "z", -0.2)
    pose.turn("right_elbow", "z", 0.2)
    root = np.zeros((frames, 3))
    root[:, 1] = 0.95 + 0.02 * np.cos(2 * phase)
    root[:, 2] = speed * t
    return _finish(pose, root, np.zeros(frames), fps, rng, noise)


def wave(frames=60, fps=20.0, cycles=2.0, seed=0, noise=0.0) -> MotionSequence:
    """Raise the right arm and wave the forearm."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, frames)
    pose = _Pose(frames)
    lift = np.clip(3 * u, 0, 1)
    _arms_down(pose, left=1.3, right=1.3 - 2.0 * lift)
    pose.turn("right_elbow", "z", 0.3 + 0.6 * lift * (0.5 + 0.5 * np.sin(2 * np.pi * cycles * u + rng.uniform(0, 1))))
    pose.turn("left_elbow", "z", -0.2)
    root = np.tile([0.0, 0.95, 0.0], (frames, 1))
    return _finish(pose, root, np.zeros(frames), fps, rng, noise)


def squat(frames=60, fps=20.0, depth=0.35, seed=0, noise=0.0) -> MotionSequence:
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, frames)
    bend = np.sin(np.pi * u) ** 2 * rng.uniform(0.9, 1.1)
    pose = _Pose(frames)
    pose.turn("left_hip", "x", -1.2 * bend)
    pose.turn("right_hip", "x", -1.2 * bend)
    pose.turn("left_knee", "x", 2.0 * bend + 0.05)
    pose.turn("right_knee", "x", 2.0 * bend + 0.05)
    pose.turn("left_ankle", "x", -0.8 * bend)
    pose.turn("right_ankle", "x", -0.8 * bend)
    pose.turn("spine1", "x", 0.4 * bend)
    _arms_down(pose, left=1.3 - 1.1 * bend, right=1.3 - 1.1 * bend)
    pose.turn("left_shoulder", "y", -1.2 * bend)
    pose.turn("right_shoulder", "y", 1.2 * bend)
    root = np.tile([0.0, 0.95, 0.0], (frames, 1))
    root[:, 1] -= depth * bend
    return _finish(pose, root, np.zeros(frames), fps, rng, noise)


def turn(frames=60, fps=20.0, angle=np.pi / 2, seed=0, noise=0.0) -> MotionSequence:
    """Turn in place; positive angles turn to the left."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, frames)
    yaw = angle * (3 * u ** 2 - 2 * u ** 3)
    pose = _Pose(frames)
    step = 0.3 * np.sin(4 * np.pi * u) ** 2
    pose.turn("left_hip", "x", -step * (np.sin(4 * np.pi * u) > 0))
    pose.turn("right_hip", "x", -step * (np.sin(4 * np.pi * u) <= 0))
    pose.turn("left_knee", "x", 0.05 + step)
    pose.turn("right_knee", "x", 0.05 + step)
    _arms_down(pose)
    root = np.tile([0.0, 0.95, 0.0], (frames, 1))
    return _finish(pose, root, yaw, fps, rng, noise)


def stomp(frames=60, fps=20.0, side="left", stomps=2, seed=0, noise=0.0) -> MotionSequence:
    """Lift one knee and bring the foot down hard, ``stomps`` times."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, frames)
    # fast fall after a slower lift
    cyc = (stomps * u) % 1.0
    lift = np.where(cyc < 0.7, np.sin(np.pi / 2 * cyc / 0.7), np.cos(np.pi / 2 * (cyc - 0.7) / 0.3))
    lift = lift * rng.uniform(0.9, 1.1)
    pose = _Pose(frames)
    pose.turn(f"{side}_hip", "x", -1.3 * lift)
    pose.turn(f"{side}_knee", "x", 0.05 + 1.6 * lift)
    pose.turn("spine1", "x", 0.1 * lift)
    _arms_down(pose, left=1.3 - 0.3 * lift, right=1.3 - 0.3 * lift)
    root = np.tile([0.0, 0.95, 0.0], (frames, 1))
    return _finish(pose, root, np.zeros(frames), fps, rng, noise)


GENERATORS = {"walk": walk, "wave": wave, "squat": squat, "turn": turn, "stomp": stomp}

TEXTS = {
    "walk": ("a person walks forward at a steady pace", "someone strolls straight ahead",
             "a man walks forward swinging his arms", "the figure takes several steps forward"),
    "wave": ("a person raises the right hand and waves", "someone waves hello with the right arm",
             "a woman lifts her right arm and waves it", "the figure greets by waving the right hand"),
    "squat": ("a person squats down and stands back up", "someone bends the knees into a deep squat",
              "a man crouches low then rises", "the figure lowers into a squat and returns"),
    "turn": ("a person turns to the left in place", "someone rotates left on the spot",
             "a man pivots around to his left", "the figure turns a quarter circle to the left"),
    "stomp": ("he stomps his left feet", "someone stamps the left foot on the ground",
              "a person lifts the left knee and stomps down", "the figure stomps with the left leg twice"),
}


def corpus(per_kind: int = 4, seed: int = 0, noise: float = 0.002) -> list[tuple[str, str, MotionSequence]]:
    """(id, text, motion) triples, ``per_kind`` variations of every generator."""
    out = []
    for k, (name, gen) in enumerate(GENERATORS.items()):
        texts = TEXTS[name]
        for i in range(per_kind):
            motion = gen(seed=seed * 1000 + 97 * k + i, noise=noise)
            out.append((f"{name}_{i:02d}", texts[i % len(texts)], motion))
    return out
