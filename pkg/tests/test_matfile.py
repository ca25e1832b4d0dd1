import numpy as np
import pytest

from atomotion import matfile


def test_roundtrip(rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5.0), "c": np.zeros((0, 2))}
    data = matfile.dumps(arrays, {"kind": "test", "n": 3})
    back, meta = matfile.loads(data)
    assert meta == {"kind": "test", "n": 3}
    for k, v in arrays.items():
        assert back[k].shape == v.shape and np.array_equal(back[k], v)
    assert matfile.dumps(back, meta) == data


def test_layout_is_little_endian_float64():
    data = matfile.dumps({"x": np.array([1.0])})
    assert data[:4] == b"ATMX"
    assert data[-8:] == np.array([1.0], dtype="<f8").tobytes()


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:-1],
    lambda d: d + b"\0",
])
def test_corrupt_files_rejected(mutate):
    data = matfile.dumps({"x": np.ones((2, 2))})
    with pytest.raises(matfile.MatFileError):
        matfile.loads(mutate(data))


def test_features_helpers(tmp_path, rng):
    rows = rng.normal(size=(4, 3))
    matfile.save_features(tmp_path / "f.atmx", rows, space="motion")
    assert np.array_equal(matfile.load_features(tmp_path / "f.atmx"), rows)
    matfile.save(tmp_path / "g.atmx", {"other": rows})
    with pytest.raises(matfile.MatFileError):
        matfile.load_features(tmp_path / "g.atmx")
