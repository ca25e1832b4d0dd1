import numpy as np
import pytest

from atomotion import synth
from atomotion.errors import IndexOutOfRange, InsufficientData, TokenizerError, TooShortMotion
from atomotion.motion import CANONICAL_SKELETON, MotionSequence
from atomotion.rvq import (
    RVQModel,
    TokenSequence,
    decode,
    encode,
    featurize,
    nearest,
    reconstruction_error,
    residuals,
    train_codebooks,
)

J = CANONICAL_SKELETON.num_joints


def test_featurize_shapes_and_constant(rng):
    m = MotionSequence(20, np.repeat(rng.normal(size=(1, J, 3)), 8, axis=0))
    f = featurize(m, 4)
    assert f.shape == (2, 3 * J)
    assert np.array_equal(f[0], f[1])


def test_featurize_ratio_one_is_root_relative(rng):
    frames = rng.normal(size=(5, J, 3))
    f = featurize(MotionSequence(20, frames), 1)
    assert np.allclose(f, (frames - frames[:, :1]).reshape(5, -1))


def test_featurize_drops_partial_window(rng):
    frames = rng.normal(size=(11, J, 3))
    f = featurize(MotionSequence(20, frames), 4)
    rel = frames - frames[:, :1]
    assert f.shape[0] == 2
    assert np.allclose(f[1], rel[4:8].mean(axis=0).ravel())


def test_featurize_too_short(rng):
    with pytest.raises(TooShortMotion):
        featurize(MotionSequence(20, rng.normal(size=(3, J, 3))), 4)


def test_two_cluster_fixed_point():
    X = np.concatenate([np.zeros(500), np.ones(500)])[:, None]
    model = train_codebooks(X, codebook_size=2, residual_layers=0, iters=10, seed=0)
    assert sorted(model.codebooks[0].ravel()) == [0.0, 1.0]
    model1 = train_codebooks(X, codebook_size=2, residual_layers=1, iters=10, seed=0)
    assert np.allclose(model1.codebooks[1], 0.0)


def test_training_is_deterministic(rng):
    X = rng.normal(size=(200, 3))
    a = train_codebooks(X, 8, 2, 10, seed=4)
    b = train_codebooks(X, 8, 2, 10, seed=4)
    assert a.to_bytes() == b.to_bytes()
    c = train_codebooks(X, 8, 2, 10, seed=5)
    assert a.to_bytes() != c.to_bytes()


def test_insufficient_rows(rng):
    with pytest.raises(InsufficientData):
        train_codebooks(rng.normal(size=(7, 2)), 8, 1)


def _hand_model():
    return RVQModel.from_codebooks([[0.0], [1.0]], [[[-0.1], [0.1]]])


def test_hand_encode_decode():
    model = _hand_model()
    tok = encode(model, [[0.92]])
    assert tok.indices.tolist() == [[1, 0]]
    assert decode(model, tok)[0, 0] == pytest.approx(0.9, abs=1e-15)


def test_tie_breaks_to_lowest_index():
    # 3.0 sits exactly between codes 2 and 5
    codes = np.array([[10.0], [10.0], [2.0], [10.0], [10.0], [4.0]])
    assert nearest(np.array([[3.0]]), codes)[0] == 2


def test_centroid_input_exact():
    model = RVQModel.from_codebooks(np.arange(6.0).reshape(3, 2))
    tok = encode(model, model.codebooks[0])
    assert tok.indices[:, 0].tolist() == [0, 1, 2]
    assert np.array_equal(decode(model, tok), model.codebooks[0])
    assert reconstruction_error(model, model.codebooks[0])[0] == 0.0


def test_zero_code_appended_and_required():
    model = _hand_model()
    assert model.codebooks[1].shape == (3, 1)
    assert np.all(model.codebooks[1][-1] == 0)
    with pytest.raises(TokenizerError):
        RVQModel((np.zeros((2, 1)), np.ones((3, 1))))


def test_decode_index_out_of_range():
    model = _hand_model()
    with pytest.raises(IndexOutOfRange):
        decode(model, [[2, 0]])
    with pytest.raises(IndexOutOfRange):
        decode(model, [[0, 3]])
    with pytest.raises(IndexOutOfRange):
        decode(model, [[0]])


def test_residual_norms_non_increasing(rng):
    X = rng.normal(size=(300, 4))
    model = train_codebooks(X, 8, 4, 10, seed=1)
    Q = rng.normal(size=(500, 4)) * 3
    prev = np.linalg.norm(Q, axis=1)
    for r in residuals(model, Q)[1:]:
        cur = np.linalg.norm(r, axis=1)
        assert np.all(cur <= prev + 1e-12)
        prev = cur
    err = reconstruction_error(model, Q)
    assert np.all(np.diff(err) <= 1e-12)


def test_decode_error_equals_final_residual(rng):
    X = rng.normal(size=(100, 3))
    model = train_codebooks(X, 8, 2, 10, seed=2)
    rec = decode(model, encode(model, X))
    assert np.allclose(X - rec, residuals(model, X)[-1], atol=1e-12)


def test_encode_permutation_equivariant(rng):
    X = rng.normal(size=(60, 3))
    model = train_codebooks(X, 8, 2, 5, seed=3)
    perm = rng.permutation(60)
    assert np.array_equal(encode(model, X[perm]).indices, encode(model, X).indices[perm])


def _brute_curve(books, X):
    res = X.copy()
    out = []
    for book in books:
        picked = np.empty_like(res)
        for n, x in enumerate(res):
            best, bd = 0, np.inf
            for c, code in enumerate(book):
                d = float(np.sum((x - code) ** 2))
                if d < bd:
                    best, bd = c, d
            picked[n] = book[best]
        res = res - picked
        out.append(np.sqrt(np.mean(res ** 2)))
    return np.array(out)


def test_reconstruction_curve_matches_brute_force(rng):
    X = rng.normal(size=(80, 2))
    model = train_codebooks(X, 4, 3, 10, seed=9)
    assert np.allclose(reconstruction_error(model, X), _brute_curve(model.codebooks, X), atol=1e-12)


def test_model_roundtrip(rng, tmp_path):
    model = train_codebooks(rng.normal(size=(40, 3)), 4, 2, 5, seed=1, ratio=2)
    path = tmp_path / "m.atmx"
    model.save(path)
    back = RVQModel.load(path)
    assert back.to_bytes() == model.to_bytes()
    assert (back.codebook_size, back.residual_layers, back.feature_dim, back.ratio, back.seed) == (4, 2, 3, 2, 1)


def test_token_csv_roundtrip():
    tok = TokenSequence([[1, 0, 3], [2, 4, 4]])
    assert tok.to_csv() == "1,0,3\n2,4,4\n"
    assert np.array_equal(TokenSequence.from_csv(tok.to_csv()).indices, tok.indices)


def test_real_motion_tokenization():
    motions = [g(seed=i) for i, g in enumerate(synth.GENERATORS.values())]
    X = np.vstack([featurize(m) for m in motions])
    model = train_codebooks(X, 8, 2, 10, seed=0)
    tok = encode(model, featurize(motions[0]))
    assert tok.indices.shape == (motions[0].num_frames // 4, 3)
    assert tok.indices[:, 0].max() < 8 and tok.indices[:, 1:].max() <= 8
