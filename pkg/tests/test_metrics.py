import numpy as np
import pytest
from scipy import linalg, stats

from atomotion.errors import FeatureDimensionMismatch, KOutOfRange, MetricsError
from atomotion.metrics import diagonal_ranks, diversity, fid, r_precision


def _fid_scipy(a, b):
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    Sa, Sb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    root = linalg.sqrtm(Sa @ Sb)
    return float(np.sum((mu_a - mu_b) ** 2) + np.trace(Sa + Sb - 2 * root.real))


def _standardized(rng, n=50):
    x = rng.normal(size=n)
    return (x - x.mean()) / x.std(ddof=1)


# -- FID ----------------------------------------------------------------------

def test_fid_identical_sets(rng):
    X = rng.normal(size=(40, 5))
    assert fid(X, X) < 1e-6


def test_fid_standardized_shift(rng):
    x = _standardized(rng)
    assert abs(fid(x, x + 1.0) - 1.0) < 1e-9
    assert abs(fid(x[:, None], x[:, None] + 1.0) - 1.0) < 1e-9


def test_fid_1d_closed_form(rng):
    a = _standardized(rng) * 2.0 + 3.0
    b = _standardized(rng, 70) * 0.5 - 1.0
    assert fid(a, b) == pytest.approx(16.0 + 1.5 ** 2, abs=1e-9)


def test_fid_matches_scipy_oracle(rng):
    for _ in range(10):
        a = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 3))
        b = rng.normal(size=(25, 3)) @ rng.normal(size=(3, 3)) + rng.normal(size=3)
        assert fid(a, b) == pytest.approx(_fid_scipy(a, b), rel=1e-8, abs=1e-8)


def test_fid_symmetric_and_rotation_invariant(rng):
    for _ in range(20):
        a = rng.normal(size=(30, 4)) * rng.uniform(0.2, 3, size=4)
        b = rng.normal(size=(20, 4)) + 0.5
        assert abs(fid(a, b) - fid(b, a)) < 1e-6
        Q = stats.ortho_group.rvs(4, random_state=int(rng.integers(1 << 31)))
        assert abs(fid(a @ Q, b @ Q) - fid(a, b)) < 1e-6


def test_fid_rank_deficient_is_non_negative(rng):
    a = np.outer(rng.normal(size=10), [1.0, 1.0, 0.0])
    assert fid(a, a) >= 0.0
    assert fid(a, a) < 1e-6


def test_fid_errors(rng):
    with pytest.raises(FeatureDimensionMismatch):
        fid(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)))
    with pytest.raises(MetricsError):
        fid(rng.normal(size=(1, 2)), rng.normal(size=(5, 2)))
    with pytest.raises(MetricsError):
        fid(np.full((3, 2), np.nan), rng.normal(size=(5, 2)))


# -- R-precision ------------------------------------------------------------------

def _rank_oracle(S, k):
    hits = 0
    for i, row in enumerate(S):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        hits += order.index(i) < k
    return hits / len(S)


def test_r_precision_identity_dominant():
    S = np.eye(5) * 10 + 0.1
    for k in range(1, 5):
        assert r_precision(S, k) == 1.0


def test_r_precision_diagonal_smallest():
    S = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 1.0], [5.0, 4.0, -1.0]])
    assert r_precision(S, 1) == 0.0


def test_r_precision_matches_oracle(rng):
    for _ in range(100):
        S = rng.normal(size=(8, 8))
        for k in (1, 2, 3):
            assert r_precision(S, k) == _rank_oracle(S, k)


def test_r_precision_ties_go_to_lower_column():
    S = np.ones((3, 3))
    assert diagonal_ranks(S).tolist() == [0, 1, 2]
    assert r_precision(S, 1) == pytest.approx(1 / 3)
    rounded = np.round(np.random.default_rng(3).normal(size=(6, 6)))
    for k in range(1, 6):
        assert r_precision(rounded, k) == _rank_oracle(rounded, k)


def test_r_precision_monotone_in_k(rng):
    S = rng.normal(size=(10, 10))
    values = [r_precision(S, k) for k in range(1, 10)]
    assert all(a <= b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("k", [0, 4, -1])
def test_r_precision_k_out_of_range(k):
    with pytest.raises(KOutOfRange):
        r_precision(np.eye(4), k)


# -- diversity ---------------------------------------------------------------------

def test_diversity_identical_rows():
    assert diversity(np.ones((6, 3)), pairs=50, seed=1) == 0.0


def test_diversity_antipodal():
    assert diversity([[1.0, 0.0], [-1.0, 0.0]], pairs=1, seed=0) == 2.0


def test_diversity_scripted_oracle(rng):
    X = rng.normal(size=(12, 3))
    rows = sorted(map(tuple, X))
    g = np.random.default_rng(7)
    i = g.integers(12, size=40)
    off = g.integers(1, 12, size=40)
    dists = [np.sqrt(sum((a - b) ** 2 for a, b in zip(rows[p], rows[(p + o) % 12]))) for p, o in zip(i, off)]
    assert diversity(X, pairs=40, seed=7) == pytest.approx(np.mean(dists), abs=1e-12)


def test_diversity_permutation_invariant(rng):
    X = rng.normal(size=(15, 4))
    assert diversity(X[rng.permutation(15)], seed=2) == diversity(X, seed=2)


def test_diversity_never_pairs_a_row_with_itself(rng):
    X = np.eye(5)
    assert diversity(X, pairs=500, seed=0) == pytest.approx(np.sqrt(2), abs=1e-12)
