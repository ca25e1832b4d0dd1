"""Contrastive text-motion alignment at desk scale.

Texts and motions are mapped by two linear projections into a shared unit
sphere.  Row i of a batch is a positive pair; every other pairing in the
batch is a negative.  Training minimises the symmetric InfoNCE loss over
the cross-similarity matrix ``A[i, j] = <motion_i, text_j>`` with plain
full-batch gradient descent.
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import matfile
from .errors import AlignmentError, DivergenceDetected, ZeroVectorInput
from .motion import MotionSequence
from .rvq import DEFAULT_RATIO, featurize

_LOG = logging.getLogger(__name__)

TEXT_DIM = 256
DEFAULT_TEMPERATURE = 0.1
DEFAULT_EMBED_DIM = 16
ZERO_NORM = 1e-12

_WORD = re.compile(r"[a-z0-9']+")


def text_features(text: str, dim: int = TEXT_DIM) -> np.ndarray:
    """Hashed bag-of-words counts (stable across processes)."""
    v = np.zeros(dim)
    for word in _WORD.findall(text.lower()):
        h = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
        v[h % dim] += 1.0
    return v


def pooled_features(rows: np.ndarray) -> np.ndarray:
    """Mean and standard deviation over the rows of an N x D_f feature matrix."""
    rows = np.atleast_2d(rows)
    return np.concatenate([rows.mean(axis=0), rows.std(axis=0)])


def motion_features(motion: MotionSequence, ratio: int = DEFAULT_RATIO) -> np.ndarray:
    """Pooled windowed root-relative features of a motion."""
    return pooled_features(featurize(motion, ratio))


@dataclass(frozen=True, eq=False)
class AlignmentModel:
    text_projection: np.ndarray     # D_t_in x D_e
    motion_projection: np.ndarray   # D_m_in x D_e
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = 0

    def __post_init__(self):
        tp = np.array(self.text_projection, dtype=np.float64)
        mp = np.array(self.motion_projection, dtype=np.float64)
        if tp.ndim != 2 or mp.ndim != 2 or tp.shape[1] != mp.shape[1]:
            raise AlignmentError("projections must be 2-D with a shared embedding width")
        if not (np.isfinite(tp).all() and np.isfinite(mp).all()):
            raise AlignmentError("projection parameters must be finite")
        if not self.temperature > 0:
            raise AlignmentError("temperature must be positive")
        tp.setflags(write=False)
        mp.setflags(write=False)
        object.__setattr__(self, "text_projection", tp)
        object.__setattr__(self, "motion_projection", mp)
        object.__setattr__(self, "temperature", float(self.temperature))

    @classmethod
    def init(cls, text_dim: int, motion_dim: int, embed_dim: int = DEFAULT_EMBED_DIM,
             temperature: float = DEFAULT_TEMPERATURE, seed: int = 0) -> "AlignmentModel":
        rng = np.random.default_rng(seed)
        tp = rng.standard_normal((text_dim, embed_dim)) / np.sqrt(text_dim)
        mp = rng.standard_normal((motion_dim, embed_dim)) / np.sqrt(motion_dim)
        return cls(tp, mp, temperature, seed)

    @property
    def embed_dim(self) -> int:
        return self.text_projection.shape[1]

    def replace(self, text_projection=None, motion_projection=None) -> "AlignmentModel":
        return AlignmentModel(
            self.text_projection if text_projection is None else text_projection,
            self.motion_projection if motion_projection is None else motion_projection,
            self.temperature, self.seed)

    def to_bytes(self) -> bytes:
        meta = {
            "kind": "alignment",
            "D_t_in": self.text_projection.shape[0],
            "D_m_in": self.motion_projection.shape[0],
            "D_e": self.embed_dim,
            "tau": self.temperature,
            "seed": self.seed,
        }
        return matfile.dumps({"text_projection": self.text_projection,
                              "motion_projection": self.motion_projection}, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AlignmentModel":
        arrays, meta = matfile.loads(data)
        if meta.get("kind") != "alignment":
            raise AlignmentError("not an alignment model file")
        return cls(arrays["text_projection"], arrays["motion_projection"], meta["tau"], int(meta["seed"]))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AlignmentModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    text_features: np.ndarray     # M x D_t_in
    motion_features: np.ndarray   # M x D_m_in

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.text_features, dtype=np.float64))
        m = np.atleast_2d(np.asarray(self.motion_features, dtype=np.float64))
        if len(t) != len(m):
            raise AlignmentError(f"batch has {len(t)} texts but {len(m)} motions")
        object.__setattr__(self, "text_features", t)
        object.__setattr__(self, "motion_features", m)

    @property
    def size(self) -> int:
        return len(self.text_features)


def _normalize_rows(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms < ZERO_NORM):
        raise ZeroVectorInput(f"row {int(np.argmin(norms))} projects to the zero vector")
    return Z / norms[:, None], norms


def _embed(x, projection: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise AlignmentError("input features must be finite")
    single = x.ndim == 1
    U, _ = _normalize_rows(np.atleast_2d(x) @ projection)
    return U[0] if single else U


def embed_text(model: AlignmentModel, features) -> np.ndarray:
    """Project and L2-normalize one text feature vector (or a stack of rows)."""
    return _embed(features, model.text_projection)


def embed_motion(model: AlignmentModel, features) -> np.ndarray:
    return _embed(features, model.motion_projection)


def similarity_matrix(model: AlignmentModel, batch: FeatureBatch) -> np.ndarray:
    """A[i, j] = cosine(motion i, text j)."""
    U = embed_motion(model, batch.motion_features)
    V = embed_text(model, batch.text_features)
    return np.clip(U @ V.T, -1.0, 1.0)


def _log_softmax(Z: np.ndarray, axis: int) -> np.ndarray:
    zmax = Z.max(axis=axis, keepdims=True)
    shifted = Z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def infonce_loss(A: np.ndarray, tau: float) -> float:
    """Symmetric InfoNCE: mean of row-wise and column-wise cross-entropy on the diagonal."""
    A = np.asarray(A, dtype=np.float64)
    M = A.shape[0]
    Z = A / tau
    rows = np.diag(_log_softmax(Z, axis=1))
    cols = np.diag(_log_softmax(Z, axis=0))
    return float(-(rows.sum() + cols.sum()) / (2 * M))


def infonce_grad(A: np.ndarray, tau: float) -> np.ndarray:
    """dL/dA = (P_row - I + P_col - I) / (2 M tau)."""
    A = np.asarray(A, dtype=np.float64)
    M = A.shape[0]
    Z = A / tau
    p_row = np.exp(_log_softmax(Z, axis=1))
    p_col = np.exp(_log_softmax(Z, axis=0))
    eye = np.eye(M)
    return ((p_row - eye) + (p_col - eye)) / (2 * M * tau)


def loss_and_grads(model: AlignmentModel, batch: FeatureBatch) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients w.r.t. (text_projection, motion_projection)."""
    X, Y = batch.motion_features, batch.text_features
    Zm = X @ model.motion_projection
    Zt = Y @ model.text_projection
    U, nu = _normalize_rows(Zm)
    V, nv = _normalize_rows(Zt)
    A = U @ V.T
    loss = infonce_loss(A, model.temperature)
    G = infonce_grad(A, model.temperature)
    dU = G @ V
    dV = G.T @ U
    # back through row normalization: d(z/|z|) = (I - u u^T) / |z|
    dZm = (dU - np.einsum("ij,ij->i", dU, U)[:, None] * U) / nu[:, None]
    dZt = (dV - np.einsum("ij,ij->i", dV, V)[:, None] * V) / nv[:, None]
    return loss, Y.T @ dZt, X.T @ dZm


def fit(model: AlignmentModel, batches: Sequence[FeatureBatch] | FeatureBatch, steps: int,
        lr: float, log_every: int = 0) -> tuple[AlignmentModel, list[float]]:
    """Full-batch gradient descent; returns the trained model and the loss history.

    With several batches the per-step gradient is the mean over batches.
    """
    if isinstance(batches, FeatureBatch):
        batches = [batches]
    if not batches:
        raise AlignmentError("no training batches")
    tp = model.text_projection.copy()
    mp = model.motion_projection.copy()
    history = []
    for step in range(steps):
        current = model.replace(tp, mp)
        loss = 0.0
        gt = np.zeros_like(tp)
        gm = np.zeros_like(mp)
        for b in batches:
            l, dt, dm = loss_and_grads(current, b)
            loss += l / len(batches)
            gt += dt / len(batches)
            gm += dm / len(batches)
        if not np.isfinite(loss) or not (np.isfinite(gt).all() and np.isfinite(gm).all()):
            raise DivergenceDetected(f"non-finite loss at step {step}")
        history.append(loss)
        if log_every and step % log_every == 0:
            _LOG.info("align step %d loss %.6f", step, loss)
        tp -= lr * gt
        mp -= lr * gm
    final = model.replace(tp, mp)
    return final, history


def rank_gallery(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score; ties keep the lower index first."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def retrieve(model: AlignmentModel, query_motion_features, gallery_text_features) -> np.ndarray:
    """Per query motion, the gallery texts ranked by cosine similarity."""
    gallery = np.atleast_2d(gallery_text_features)
    if len(gallery) == 0:
        raise AlignmentError("empty gallery")
    U = np.atleast_2d(embed_motion(model, query_motion_features))
    V = embed_text(model, gallery)
    return rank_gallery(U @ V.T)
