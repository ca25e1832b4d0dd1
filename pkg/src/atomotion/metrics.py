"""FID, R-precision and Diversity over embedding feature sets."""
from __future__ import annotations

import numpy as np

from .errors import FeatureDimensionMismatch, KOutOfRange, MetricsError

DEFAULT_DIVERSITY_PAIRS = 300


def _feature_set(rows, name: str) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or len(X) < 2:
        raise MetricsError(f"{name}: need an n x D feature set with n >= 2, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise MetricsError(f"{name}: features must be finite")
    return X


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh((S + S.T) / 2)
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def fid(a, b) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    tr((Sa Sb)^1/2) is taken as tr((Sa^1/2 Sb Sa^1/2)^1/2); that product is
    symmetric PSD and has the same eigenvalues as Sa Sb.
    """
    A = _feature_set(a, "a")
    B = _feature_set(b, "b")
    if A.shape[1] != B.shape[1]:
        raise FeatureDimensionMismatch(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    mu_a, mu_b = A.mean(axis=0), B.mean(axis=0)
    Sa = np.atleast_2d(np.cov(A, rowvar=False, ddof=1))
    Sb = np.atleast_2d(np.cov(B, rowvar=False, ddof=1))
    ra = _psd_sqrt(Sa)
    w = np.linalg.eigvalsh(ra @ Sb @ ra)
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    d = mu_a - mu_b
    value = float(d @ d + np.trace(Sa) + np.trace(Sb) - 2.0 * cross)
    return max(value, 0.0)


def diagonal_ranks(similarity) -> np.ndarray:
    """0-based rank of each row's diagonal entry (descending; ties go to the lower column)."""
    S = np.asarray(similarity, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise MetricsError(f"similarity must be square, got shape {S.shape}")
    n = len(S)
    diag = np.diag(S)[:, None]
    cols = np.arange(n)
    greater = (S > diag).sum(axis=1)
    ties_before = ((S == diag) & (cols[None, :] < cols[:, None])).sum(axis=1)
    return greater + ties_before


def r_precision(similarity, k: int) -> float:
    S = np.asarray(similarity, dtype=np.float64)
    n = S.shape[0] if S.ndim == 2 else 0
    if not 1 <= k < n:
        raise KOutOfRange(f"k={k} must satisfy 1 <= k < n={n}")
    return float(np.mean(diagonal_ranks(S) < k))


def diversity(rows, pairs: int = DEFAULT_DIVERSITY_PAIRS, seed: int = 0) -> float:
    """Mean Euclidean distance over ``pairs`` seeded pairs of distinct rows.

    Rows are put in lexicographic order first, so the value does not depend
    on the order the features were supplied in.
    """
    X = _feature_set(rows, "rows")
    if pairs < 1:
        raise MetricsError("pairs must be >= 1")
    X = X[np.lexsort(X.T[::-1])]
    n = len(X)
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=pairs)
    j = (i + rng.integers(1, n, size=pairs)) % n
    return float(np.linalg.norm(X[i] - X[j], axis=1).mean())
