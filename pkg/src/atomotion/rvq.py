"""Residual vector quantization of downsampled motion features.

A base k-means codebook quantizes each feature row; every residual layer
quantizes what the layers below left over.  Residual codebooks carry an
extra all-zero code as their last row, so a layer may always abstain and
the residual norm never grows from one layer to the next.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import matfile
from .errors import IndexOutOfRange, InsufficientData, TokenizerError, TooShortMotion
from .motion import MotionSequence

DEFAULT_CODEBOOK_SIZE = 512
DEFAULT_RATIO = 4
DEFAULT_RESIDUAL_LAYERS = 5
DEFAULT_KMEANS_ITERS = 25


def featurize(motion: MotionSequence, ratio: int = DEFAULT_RATIO) -> np.ndarray:
    """Average root-relative joint positions over non-overlapping windows.

    Returns N x (3*J) with N = F // ratio; trailing frames that do not fill
    a window are dropped.
    """
    F = motion.num_frames
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    if F < ratio:
        raise TooShortMotion(f"motion has {F} frames, fewer than the downsample ratio {ratio}")
    N = F // ratio
    rel = motion.frames - motion.frames[:, motion.skeleton.root:motion.skeleton.root + 1]
    windows = rel[: N * ratio].reshape(N, ratio, motion.num_joints * 3)
    return windows.mean(axis=1)


def nearest(points: np.ndarray, codes: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Index of the nearest code (squared Euclidean) for every point.

    Distances are formed as sums of squared differences, so exact ties
    resolve to the lowest index.
    """
    out = np.empty(len(points), dtype=np.int64)
    for i in range(0, len(points), chunk):
        diff = points[i:i + chunk, None, :] - codes[None, :, :]
        out[i:i + chunk] = np.argmin(np.einsum("ncd,ncd->nc", diff, diff), axis=1)
    return out


def kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding and a fixed iteration count."""
    n = len(data)
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.einsum("nd,nd->n", data - centers[0], data - centers[0])
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[c] = data[idx]
        diff = data - centers[c]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", diff, diff))
    for _ in range(iters):
        labels = nearest(data, centers)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, data)
        counts = np.bincount(labels, minlength=k)
        filled = counts > 0
        # empty clusters keep their previous center
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


@dataclass(frozen=True, eq=False)
class RVQModel:
    """Base codebook (C x D) plus R residual codebooks ((C+1) x D, last row zero)."""

    codebooks: tuple[np.ndarray, ...]
    ratio: int = DEFAULT_RATIO
    seed: int = 0

    def __post_init__(self):
        books = tuple(np.array(b, dtype=np.float64) for b in self.codebooks)
        if not books:
            raise TokenizerError("an RVQ model needs a base codebook")
        C, D = books[0].shape
        for layer, b in enumerate(books[1:], start=1):
            if b.shape != (C + 1, D):
                raise TokenizerError(f"residual codebook {layer} has shape {b.shape}, expected {(C + 1, D)}")
            if np.any(b[-1] != 0):
                raise TokenizerError(f"residual codebook {layer} must end with the zero code")
        for b in books:
            if not np.isfinite(b).all():
                raise TokenizerError("codebooks must be finite")
            b.setflags(write=False)
        object.__setattr__(self, "codebooks", books)

    @classmethod
    def from_codebooks(cls, base, residuals=(), ratio: int = DEFAULT_RATIO, seed: int = 0) -> "RVQModel":
        """Build a model, appending the zero code to each residual codebook."""
        base = np.atleast_2d(np.asarray(base, dtype=np.float64))
        books = [base]
        for r in residuals:
            r = np.asarray(r, dtype=np.float64).reshape(-1, base.shape[1])
            books.append(np.vstack([r, np.zeros((1, base.shape[1]))]))
        return cls(tuple(books), ratio, seed)

    @property
    def codebook_size(self) -> int:
        return self.codebooks[0].shape[0]

    @property
    def residual_layers(self) -> int:
        return len(self.codebooks) - 1

    @property
    def feature_dim(self) -> int:
        return self.codebooks[0].shape[1]

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {
            "kind": "rvq",
            "C": self.codebook_size,
            "R": self.residual_layers,
            "D_f": self.feature_dim,
            "r": self.ratio,
            "seed": self.seed,
        }
        return matfile.dumps({f"layer{i}": b for i, b in enumerate(self.codebooks)}, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RVQModel":
        arrays, meta = matfile.loads(data)
        if meta.get("kind") != "rvq":
            raise TokenizerError("not an RVQ model file")
        books = tuple(arrays[f"layer{i}"] for i in range(meta["R"] + 1))
        return cls(books, int(meta["r"]), int(meta["seed"]))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RVQModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(frozen=True, eq=False)
class TokenSequence:
    indices: np.ndarray   # N x (1 + R)

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[0] < 1:
            raise TokenizerError(f"token indices must be N x (1+R) with N >= 1, got {idx.shape}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def num_slots(self) -> int:
        return self.indices.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(self.indices.tolist())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TokenSequence":
        rows = [[int(x) for x in row] for row in csv.reader(io.StringIO(text)) if row]
        return cls(np.array(rows, dtype=np.int64))


def train_codebooks(features: np.ndarray, codebook_size: int = DEFAULT_CODEBOOK_SIZE,
                    residual_layers: int = DEFAULT_RESIDUAL_LAYERS, iters: int = DEFAULT_KMEANS_ITERS,
                    seed: int = 0, ratio: int = DEFAULT_RATIO) -> RVQModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise TokenizerError("features must be a 2-D array")
    if len(X) < codebook_size:
        raise InsufficientData(f"{len(X)} feature rows cannot fill a codebook of {codebook_size}")
    rng = np.random.default_rng(seed)
    residual = X.copy()
    books = []
    for layer in range(residual_layers + 1):
        centers = kmeans(residual, codebook_size, iters, rng)
        if layer > 0:
            centers = np.vstack([centers, np.zeros((1, X.shape[1]))])
        books.append(centers)
        residual = residual - centers[nearest(residual, centers)]
    return RVQModel(tuple(books), ratio, seed)


def _check_dim(model: RVQModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.feature_dim:
        raise TokenizerError(f"feature dim {X.shape[1]} does not match model dim {model.feature_dim}")
    return X


def encode(model: RVQModel, features: np.ndarray) -> TokenSequence:
    """Greedy layer-by-layer nearest-code assignment."""
    residual = _check_dim(model, features).copy()
    cols = []
    for book in model.codebooks:
        idx = nearest(residual, book)
        cols.append(idx)
        residual = residual - book[idx]
    return TokenSequence(np.stack(cols, axis=1))


def decode(model: RVQModel, tokens: TokenSequence | np.ndarray) -> np.ndarray:
    """Sum the selected code vectors of every layer."""
    idx = tokens.indices if isinstance(tokens, TokenSequence) else np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if idx.shape[1] != len(model.codebooks):
        raise IndexOutOfRange(f"tokens have {idx.shape[1]} layers, model has {len(model.codebooks)}")
    out = np.zeros((idx.shape[0], model.feature_dim))
    for layer, book in enumerate(model.codebooks):
        col = idx[:, layer]
        if col.min() < 0 or col.max() >= len(book):
            raise IndexOutOfRange(f"layer {layer} index outside [0, {len(book)})")
        out += book[col]
    return out


def residuals(model: RVQModel, features: np.ndarray) -> list[np.ndarray]:
    """Residual left after layers 0..l, for every l."""
    residual = _check_dim(model, features).copy()
    out = []
    for book in model.codebooks:
        residual = residual - book[nearest(residual, book)]
        out.append(residual.copy())
    return out


def reconstruction_error(model: RVQModel, features: np.ndarray) -> np.ndarray:
    """RMS (over all feature entries) of the residual after each layer."""
    return np.array([np.sqrt(np.mean(r * r)) for r in residuals(model, features)])
