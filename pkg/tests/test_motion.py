import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atomotion.errors import (
    DegenerateOutput,
    InvalidSkeleton,
    JointCountMismatch,
    MalformedHeader,
    NonFiniteCoordinate,
)
from atomotion.motion import (
    BODY_PARTS,
    CANONICAL_SKELETON,
    MotionDataset,
    MotionSequence,
    Skeleton,
    canonical_rest_pose,
    load_motion,
    resample,
    save_motion,
)

J = CANONICAL_SKELETON.num_joints


def _doc(frames, fps=20, skeleton=CANONICAL_SKELETON):
    return json.dumps({"format": "atomotion-motion", "version": 1, "fps": fps,
                       "skeleton": skeleton.to_dict(), "frames": frames})


def test_canonical_skeleton_shape():
    assert J == 22
    assert CANONICAL_SKELETON.root == 0
    assert set(CANONICAL_SKELETON.body_parts) == set(BODY_PARTS)
    assert CANONICAL_SKELETON.joint_names[0] == "pelvis"


def test_skeleton_rejects_cycles_and_two_roots():
    with pytest.raises(InvalidSkeleton):
        Skeleton(("a", "b"), (1, 0), ("spine", "spine"))
    with pytest.raises(InvalidSkeleton):
        Skeleton(("a", "b"), (-1, -1), ("spine", "spine"))
    with pytest.raises(InvalidSkeleton):
        Skeleton(("a", "b"), (-1, 0), ("spine", "tail"))


def test_load_two_frame_fixture():
    frames = np.zeros((2, J, 3)).tolist()
    m = load_motion(_doc(frames))
    assert (m.num_frames, m.num_joints, m.fps) == (2, 22, 20.0)


def test_nan_in_frame_3_is_named():
    frames = np.zeros((5, J, 3))
    frames[3, 4, 1] = np.nan
    with pytest.raises(NonFiniteCoordinate) as err:
        MotionSequence(20, frames)
    assert err.value.frame == 3
    assert "3" in str(err.value)


def test_nan_in_file_frame_3():
    doc = json.loads(_doc(np.zeros((5, J, 3)).tolist()))
    doc["frames"][3][0][0] = float("nan")
    with pytest.raises(NonFiniteCoordinate) as err:
        load_motion(json.dumps(doc))   # json writes NaN, which json.loads accepts
    assert err.value.frame == 3


def test_21_joints_against_22_joint_skeleton():
    frames = np.zeros((2, 21, 3)).tolist()
    with pytest.raises(JointCountMismatch):
        load_motion(_doc(frames), skeleton=CANONICAL_SKELETON)
    with pytest.raises(JointCountMismatch):
        MotionSequence(20, np.zeros((2, 21, 3)))


@pytest.mark.parametrize("doc", [
    "not json",
    "[]",
    json.dumps({"fps": 20}),
    json.dumps({"fps": -1, "skeleton": CANONICAL_SKELETON.to_dict(), "frames": []}),
    json.dumps({"fps": 20, "skeleton": CANONICAL_SKELETON.to_dict(), "frames": [[[0, 0]] * J] * 2}),
    json.dumps({"format": "other", "fps": 20}),
])
def test_malformed_documents(doc):
    with pytest.raises(MalformedHeader):
        load_motion(doc)


def test_single_frame_is_rejected():
    with pytest.raises(MalformedHeader):
        MotionSequence(20, np.zeros((1, J, 3)))


def test_roundtrip_random_100_frames_bit_exact(rng):
    m = MotionSequence(20, rng.normal(size=(100, J, 3)))
    data = save_motion(m)
    back = load_motion(data)
    assert back.frames.tobytes() == m.frames.tobytes()
    assert back.fps == m.fps
    assert back.skeleton == m.skeleton
    assert save_motion(back) == data


def test_load_accepts_streams(rng):
    m = MotionSequence(30, rng.normal(size=(3, J, 3)))
    data = save_motion(m)
    assert np.array_equal(load_motion(io.BytesIO(data)).frames, m.frames)
    assert np.array_equal(load_motion(data.decode()).frames, m.frames)


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.just(J), st.just(3)), elements=finite),
       st.floats(min_value=0.5, max_value=240, allow_nan=False))
def test_roundtrip_property(frames, fps):
    m = MotionSequence(fps, frames)
    back = load_motion(save_motion(m))
    assert back.frames.tobytes() == m.frames.tobytes()
    assert back.fps == m.fps


def test_frames_are_immutable(rng):
    m = MotionSequence(20, rng.normal(size=(2, J, 3)))
    with pytest.raises(ValueError):
        m.frames[0, 0, 0] = 1.0


def test_dataset_invariants(rng):
    m = MotionSequence(20, rng.normal(size=(2, J, 3)))
    with pytest.raises(ValueError):
        MotionDataset(())
    other = Skeleton(("a", "b"), (-1, 0), ("trajectory", "spine"))
    m2 = MotionSequence(20, rng.normal(size=(2, 2, 3)), other)
    with pytest.raises(InvalidSkeleton):
        MotionDataset.of([m, m2])
    assert len(MotionDataset.of([m, m], ["a", "b"])) == 2


def test_rest_pose_is_upright():
    pose = canonical_rest_pose()
    names = CANONICAL_SKELETON.joint_names
    assert pose[names.index("head"), 1] > pose[names.index("pelvis"), 1] > pose[names.index("left_ankle"), 1]
    assert pose[names.index("left_wrist"), 0] > 0 > pose[names.index("right_wrist"), 0]


# -- resampling -----------------------------------------------------------

def test_resample_identity_returns_input(rng):
    m = MotionSequence(20, rng.normal(size=(7, J, 3)))
    assert resample(m, 20) is m


def test_resample_midpoint():
    p0 = np.zeros((J, 3))
    p1 = np.ones((J, 3)) * 2.0
    m = MotionSequence(10, np.stack([p0, p1]))
    out = resample(m, 20)
    assert out.num_frames == 4
    assert np.allclose(out.frames[1], (p0 + p1) / 2)


def _interp_oracle(frames, fps, target):
    F = len(frames)
    F_out = int(np.floor(F * target / fps + 0.5))
    t_src = np.arange(F) / fps
    out = np.empty((F_out,) + frames.shape[1:])
    for k in range(F_out):
        t = min(k / target, t_src[-1])
        for j in range(frames.shape[1]):
            for c in range(3):
                out[k, j, c] = np.interp(t, t_src, frames[:, j, c])
    return out


def test_resample_100_to_50_matches_oracle(rng):
    frames = rng.normal(size=(100, J, 3))
    out = resample(MotionSequence(20, frames), 10)
    assert out.num_frames == 50
    assert np.allclose(out.frames, _interp_oracle(frames, 20, 10), atol=1e-12)


def test_resample_upsample_matches_oracle(rng):
    frames = rng.normal(size=(9, J, 3))
    out = resample(MotionSequence(12, frames), 30)
    assert np.allclose(out.frames, _interp_oracle(frames, 12, 30), atol=1e-12)


def test_resample_degenerate():
    m = MotionSequence(20, np.zeros((3, J, 3)))
    with pytest.raises(DegenerateOutput):
        resample(m, 5)


def test_resample_commutes_with_joint_permutation(rng):
    frames = rng.normal(size=(11, J, 3))
    perm = rng.permutation(J)
    direct = resample(MotionSequence(20, frames), 13).frames
    skel = Skeleton(tuple(f"j{i}" for i in range(J)), (-1,) + (0,) * (J - 1), ("spine",) * J)
    permuted = resample(MotionSequence(20, frames[:, perm], skel), 13).frames
    assert np.array_equal(permuted[:, np.argsort(perm)], direct)
