"""Masked token generation conditioned on raw and atomic text features.

The stack is K repetitions of

* a single-head transformer layer over ``[text; motion slots]`` (residual
  attention + residual two-layer ReLU feed-forward, no normalisation), and
* compositional feature fusion: the motion channels are split into L body
  part groups, each group is projected to D_W and cross-attends only to
  that part's P atomic text features, then is projected back,

followed by a linear classification head over token classes.  Forward and
backward passes are plain numpy so every gradient can be checked against
finite differences.

Decoding starts from an all-[MASK] sequence and, over S steps, samples the
masked slots and re-masks the least confident ones on a cosine schedule.
Residual layers are then predicted in one argmax pass each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import matfile
from .errors import DimensionMismatch, GenerativeError, InvalidScorerDistribution
from .motion import BODY_PARTS

NUM_PARTS = len(BODY_PARTS)
PROB_TOL = 1e-6


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def softmax(Z: np.ndarray, axis: int = -1) -> np.ndarray:
    Z = Z - Z.max(axis=axis, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=axis, keepdims=True)


def attention_weights(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    return softmax(Q @ K.T / math.sqrt(Q.shape[-1]), axis=-1)


def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d)) V."""
    Q, K, V = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (Q, K, V))
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape} do not agree")
    return attention_weights(Q, K) @ V


def attention_backward(Q, K, V, P, dO):
    """Gradients (dQ, dK, dV) of attention given weights ``P`` and output grad ``dO``."""
    scale = 1.0 / math.sqrt(Q.shape[-1])
    dV = P.T @ dO
    dP = dO @ V.T
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dQ = dS @ K * scale
    dK = dS.T @ Q * scale
    return dQ, dK, dV


# ---------------------------------------------------------------------------
# configuration and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StackConfig:
    K: int = 2
    L: int = NUM_PARTS
    D_m: int = 96
    D_W: int = 16
    D_T: int = 32
    C: int = 512          # token classes the head predicts
    R: int = 5            # residual layers (indicator ids 1..R)
    hidden: int = 192
    positional: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise GenerativeError("K must be >= 1")
        if self.D_m % self.L:
            raise DimensionMismatch(f"D_m={self.D_m} is not divisible by L={self.L}")

    @property
    def group(self) -> int:
        return self.D_m // self.L


def param_shapes(cfg: StackConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "token_embedding": (cfg.C, cfg.D_m),
        "mask_embedding": (cfg.D_m,),
        "indicator_embedding": (cfg.R, cfg.D_m),
        "text_projection": (cfg.D_T, cfg.D_m),
    }
    for k in range(cfg.K):
        p = f"block{k}."
        shapes.update({
            p + "attn_q": (cfg.D_m, cfg.D_m),
            p + "attn_k": (cfg.D_m, cfg.D_m),
            p + "attn_v": (cfg.D_m, cfg.D_m),
            p + "attn_o": (cfg.D_m, cfg.D_m),
            p + "ff_w1": (cfg.D_m, cfg.hidden),
            p + "ff_b1": (cfg.hidden,),
            p + "ff_w2": (cfg.hidden, cfg.D_m),
            p + "ff_b2": (cfg.D_m,),
            p + "cff_in": (cfg.L, cfg.group, cfg.D_W),
            p + "cff_out": (cfg.L, cfg.D_W, cfg.group),
        })
    shapes["head_w"] = (cfg.D_m, cfg.C)
    shapes["head_b"] = (cfg.C,)
    return shapes


@dataclass(frozen=True, eq=False)
class GenerativeStack:
    config: StackConfig
    params: Mapping[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        missing = set(shapes) - set(self.params)
        if missing:
            raise GenerativeError(f"missing parameters: {sorted(missing)}")
        params = {}
        for name, shape in shapes.items():
            a = np.array(self.params[name], dtype=np.float64)
            if a.shape != shape:
                raise DimensionMismatch(f"parameter {name} has shape {a.shape}, expected {shape}")
            params[name] = a
        object.__setattr__(self, "params", params)

    def block(self, k: int) -> dict[str, np.ndarray]:
        prefix = f"block{k}."
        return {n[len(prefix):]: a for n, a in self.params.items() if n.startswith(prefix)}

    def with_params(self, params: Mapping[str, np.ndarray]) -> "GenerativeStack":
        return GenerativeStack(self.config, {**self.params, **params})

    def to_bytes(self) -> bytes:
        meta = {"kind": "generative", **{k: getattr(self.config, k) for k in
                                         ("K", "L", "D_m", "D_W", "D_T", "C", "R", "hidden", "positional")}}
        return matfile.dumps(self.params, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GenerativeStack":
        arrays, meta = matfile.loads(data)
        if meta.pop("kind", None) != "generative":
            raise GenerativeError("not a generative weight file")
        return cls(StackConfig(**meta), arrays)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GenerativeStack":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_stack(config: StackConfig, seed: int = 0) -> GenerativeStack:
    """Gaussian weights scaled by 1/sqrt(fan_in); biases at zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("_b", "_b1", "_b2")) or len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name.endswith("embedding"):
            params[name] = rng.standard_normal(shape) * 0.5
        else:
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[-2])
    return GenerativeStack(config, params)


def zero_stack(config: StackConfig) -> GenerativeStack:
    return GenerativeStack(config, {n: np.zeros(s) for n, s in param_shapes(config).items()})


# ---------------------------------------------------------------------------
# data carried through the stack
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MotionEmbedding:
    tokens: np.ndarray      # N x D_m
    mask: np.ndarray        # N booleans, True = [MASK]

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.tokens, dtype=np.float64))
        m = np.asarray(self.mask, dtype=bool).reshape(-1)
        if len(m) != len(t):
            raise DimensionMismatch(f"{len(t)} token rows but {len(m)} mask flags")
        if not np.isfinite(t).all():
            raise GenerativeError("motion embedding must be finite")
        object.__setattr__(self, "tokens", t)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class AtomicFeatureGrid:
    W: np.ndarray           # L x P x D_W

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 3 or W.shape[0] != NUM_PARTS:
            raise DimensionMismatch(f"atomic features must be {NUM_PARTS} x P x D_W, got {W.shape}")
        if not np.isfinite(W).all():
            raise GenerativeError("atomic features must be finite")
        object.__setattr__(self, "W", W)


@dataclass(frozen=True, eq=False)
class Conditioning:
    raw_text: np.ndarray    # D_T
    atomic: np.ndarray      # L x P x D_W


def _grid(W) -> np.ndarray:
    return W.W if isinstance(W, AtomicFeatureGrid) else np.asarray(W, dtype=np.float64)


def embed_tokens(stack: GenerativeStack, indices, mask=None) -> MotionEmbedding:
    """One-hot token ids through the embedding table; ``indices`` may be N or N x layers (summed)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    table = stack.params["token_embedding"]
    if idx.size and (idx.min() < 0 or idx.max() >= len(table)):
        raise GenerativeError(f"token id outside [0, {len(table)})")
    tokens = table[idx].sum(axis=1)
    if mask is None:
        mask = np.zeros(len(idx), dtype=bool)
    return MotionEmbedding(tokens, mask)


def positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------------------
# transformer layer
# ---------------------------------------------------------------------------

def _transformer_forward(block: Mapping[str, np.ndarray], X: np.ndarray):
    Q = X @ block["attn_q"]
    K = X @ block["attn_k"]
    V = X @ block["attn_v"]
    P = attention_weights(Q, K)
    A = P @ V
    X1 = X + A @ block["attn_o"]
    H = X1 @ block["ff_w1"] + block["ff_b1"]
    Hr = np.maximum(H, 0.0)
    X2 = X1 + Hr @ block["ff_w2"] + block["ff_b2"]
    return X2, (X, Q, K, V, P, A, X1, H, Hr)


def _transformer_backward(block, cache, dX2):
    X, Q, K, V, P, A, X1, H, Hr = cache
    g = {}
    g["ff_w2"] = Hr.T @ dX2
    g["ff_b2"] = dX2.sum(axis=0)
    dH = (dX2 @ block["ff_w2"].T) * (H > 0)
    g["ff_w1"] = X1.T @ dH
    g["ff_b1"] = dH.sum(axis=0)
    dX1 = dX2 + dH @ block["ff_w1"].T
    g["attn_o"] = A.T @ dX1
    dA = dX1 @ block["attn_o"].T
    dQ, dK, dV = attention_backward(Q, K, V, P, dA)
    g["attn_q"] = X.T @ dQ
    g["attn_k"] = X.T @ dK
    g["attn_v"] = X.T @ dV
    dX = dX1 + dQ @ block["attn_q"].T + dK @ block["attn_k"].T + dV @ block["attn_v"].T
    return dX, g


def transformer_layer(block: Mapping[str, np.ndarray], text: np.ndarray, motion) -> tuple[np.ndarray, np.ndarray]:
    """Self-attention + feed-forward over the text slot followed by the N motion slots.

    ``text`` is the (already projected) D_m text feature; ``motion`` is an
    N x D_m array or a :class:`MotionEmbedding`.  Returns the refined text
    feature and the refined N x D_m motion features.
    """
    m = motion.tokens if isinstance(motion, MotionEmbedding) else np.atleast_2d(np.asarray(motion, dtype=np.float64))
    t = np.asarray(text, dtype=np.float64).reshape(-1)
    d = block["attn_q"].shape[0]
    if t.shape[0] != d or m.shape[1] != d:
        raise DimensionMismatch(f"transformer layer expects width {d}, got text {t.shape[0]} and motion {m.shape[1]}")
    X2, _ = _transformer_forward(block, np.vstack([t, m]))
    return X2[0], X2[1:]


# ---------------------------------------------------------------------------
# compositional feature fusion
# ---------------------------------------------------------------------------

def _cff_forward(block, motion: np.ndarray, W: np.ndarray):
    L, g, D_W = block["cff_in"].shape
    N, D_m = motion.shape
    if D_m != L * g:
        raise DimensionMismatch(f"motion width {D_m} does not split into {L} groups of {g}")
    if W.shape[0] != L or W.shape[2] != D_W:
        raise DimensionMismatch(f"atomic features {W.shape} do not match L={L}, D_W={D_W}")
    parts = motion.reshape(N, L, g).transpose(1, 0, 2)           # L x N x g
    Q = np.einsum("lng,lgw->lnw", parts, block["cff_in"])         # L x N x D_W
    scale = 1.0 / math.sqrt(D_W)
    P = softmax(np.einsum("lnw,lpw->lnp", Q, W) * scale, axis=-1)  # L x N x P
    O = np.einsum("lnp,lpw->lnw", P, W)                           # L x N x D_W
    Y = np.einsum("lnw,lwg->lng", O, block["cff_out"])            # L x N x g
    out = Y.transpose(1, 0, 2).reshape(N, D_m)
    return out, (parts, Q, P, O, W)


def _cff_backward(block, cache, dout):
    parts, Q, P, O, W = cache
    L, N, g = parts.shape
    D_W = Q.shape[-1]
    dY = dout.reshape(N, L, g).transpose(1, 0, 2)
    grads = {"cff_out": np.einsum("lnw,lng->lwg", O, dY)}
    dO = np.einsum("lng,lwg->lnw", dY, block["cff_out"])
    dP = np.einsum("lnw,lpw->lnp", dO, W)
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dQ = np.einsum("lnp,lpw->lnw", dS, W) / math.sqrt(D_W)
    grads["cff_in"] = np.einsum("lng,lnw->lgw", parts, dQ)
    dparts = np.einsum("lnw,lgw->lng", dQ, block["cff_in"])
    return dparts.transpose(1, 0, 2).reshape(N, L * g), grads


def cff_parts(motion, W, block: Mapping[str, np.ndarray]) -> np.ndarray:
    """Per-part cross-attention outputs (L x N x D_W), before the out-projection."""
    m = motion.tokens if isinstance(motion, MotionEmbedding) else np.atleast_2d(np.asarray(motion, dtype=np.float64))
    _, (_, _, _, O, _) = _cff_forward(block, m, _grid(W))
    return O


def cff(motion, W, block: Mapping[str, np.ndarray]) -> np.ndarray:
    """Fuse atomic text features into the motion channels; returns N x D_m.

    Channel group l only attends to ``W[l]``.
    """
    m = motion.tokens if isinstance(motion, MotionEmbedding) else np.atleast_2d(np.asarray(motion, dtype=np.float64))
    out, _ = _cff_forward(block, m, _grid(W))
    return out


# ---------------------------------------------------------------------------
# full stack
# ---------------------------------------------------------------------------

def _input(stack: GenerativeStack, motion: MotionEmbedding, indicator: int) -> np.ndarray:
    cfg = stack.config
    if motion.tokens.shape[1] != cfg.D_m:
        raise DimensionMismatch(f"motion width {motion.tokens.shape[1]} != D_m {cfg.D_m}")
    m = np.where(motion.mask[:, None], stack.params["mask_embedding"][None, :], motion.tokens)
    if indicator:
        if not 1 <= indicator <= cfg.R:
            raise GenerativeError(f"indicator {indicator} outside 1..{cfg.R}")
        m = m + stack.params["indicator_embedding"][indicator - 1]
    if cfg.positional:
        m = m + positional_encoding(len(m), cfg.D_m)
    return m


def _forward(stack, raw_text, W, motion: MotionEmbedding, indicator: int):
    cfg = stack.config
    raw = np.asarray(raw_text, dtype=np.float64).reshape(-1)
    if raw.shape[0] != cfg.D_T:
        raise DimensionMismatch(f"raw text feature has {raw.shape[0]} dims, expected D_T={cfg.D_T}")
    W = _grid(W)
    t = raw @ stack.params["text_projection"]
    m = _input(stack, motion, indicator)
    caches = []
    for k in range(cfg.K):
        block = stack.block(k)
        X2, tcache = _transformer_forward(block, np.vstack([t, m]))
        t, m1 = X2[0], X2[1:]
        fused, ccache = _cff_forward(block, m1, W)
        m = m1 + fused
        caches.append((tcache, ccache))
    logits = m @ stack.params["head_w"] + stack.params["head_b"]
    return logits, (raw, m, caches)


def forward(stack: GenerativeStack, raw_text_feature, W, motion: MotionEmbedding, indicator: int = 0) -> np.ndarray:
    """Logits (N x C) for every motion slot.

    ``indicator`` is 0 for the base-layer model and 1..R for residual layers.
    """
    logits, _ = _forward(stack, raw_text_feature, W, motion, indicator)
    return logits


def cross_entropy(logits: np.ndarray, targets: np.ndarray, weights=None) -> tuple[float, np.ndarray]:
    """Weighted mean token cross-entropy and its gradient w.r.t. the logits."""
    targets = np.asarray(targets, dtype=np.int64)
    N = len(targets)
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise GenerativeError("cross-entropy needs at least one weighted slot")
    Z = logits - logits.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    loss = float(-(w * logp[np.arange(N), targets]).sum() / total)
    d = np.exp(logp)
    d[np.arange(N), targets] -= 1.0
    return loss, d * (w / total)[:, None]


def loss_and_grads(stack: GenerativeStack, raw_text, W, token_layers, mask, targets,
                   indicator: int = 0, weights=None) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy of the stack's predictions and gradients for every parameter.

    ``token_layers`` (N or N x layers) are embedded and summed; masked
    slots are replaced by the [MASK] embedding.
    """
    cfg = stack.config
    idx = np.asarray(token_layers, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    motion = embed_tokens(stack, idx, mask)
    logits, (raw, m_final, caches) = _forward(stack, raw_text, W, motion, indicator)
    loss, dlogits = cross_entropy(logits, targets, weights)

    grads = {n: np.zeros_like(a) for n, a in stack.params.items()}
    grads["head_w"] = m_final.T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dm = dlogits @ stack.params["head_w"].T
    dt = np.zeros(cfg.D_m)
    for k in reversed(range(cfg.K)):
        block = stack.block(k)
        tcache, ccache = caches[k]
        dfused_in, cg = _cff_backward(block, ccache, dm)
        dm1 = dm + dfused_in
        dX, tg = _transformer_backward(block, tcache, np.vstack([dt, dm1]))
        dt, dm = dX[0], dX[1:]
        for name, gval in {**tg, **cg}.items():
            grads[f"block{k}.{name}"] = gval
    grads["text_projection"] = np.outer(raw, dt)
    masked = motion.mask
    grads["mask_embedding"] = dm[masked].sum(axis=0)
    if indicator:
        grads["indicator_embedding"][indicator - 1] = dm.sum(axis=0)
    live = ~masked
    for col in range(idx.shape[1]):
        np.add.at(grads["token_embedding"], idx[live, col], dm[live])
    return loss, grads


def sgd_step(stack: GenerativeStack, grads: Mapping[str, np.ndarray], lr: float) -> GenerativeStack:
    return stack.with_params({n: stack.params[n] - lr * g for n, g in grads.items()})


# ---------------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------------

# A base scorer maps (tokens[N], mask[N], conditioning) -> N x C probabilities.
Scorer = Callable[[np.ndarray, np.ndarray, object], np.ndarray]
# A residual scorer maps (lower_tokens[N x v], v, conditioning) -> N x C probabilities.
ResidualScorer = Callable[[np.ndarray, int, object], np.ndarray]


def _restrict(probs: np.ndarray, allowed: int | None) -> np.ndarray:
    if allowed is None or allowed >= probs.shape[1]:
        return probs
    p = probs.copy()
    p[:, allowed:] = 0.0
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class StackScorer:
    """Base-layer scorer backed by a :class:`GenerativeStack`.

    ``allowed`` limits sampling to the first ``allowed`` classes (the base
    codebook has no zero code).
    """
    stack: GenerativeStack
    allowed: int | None = None

    def __call__(self, tokens, mask, conditioning: Conditioning) -> np.ndarray:
        tokens = np.where(np.asarray(mask, dtype=bool), 0, np.asarray(tokens, dtype=np.int64))
        emb = embed_tokens(self.stack, tokens, mask)
        logits = forward(self.stack, conditioning.raw_text, conditioning.atomic, emb, 0)
        return _restrict(softmax(logits, axis=1), self.allowed)


@dataclass(frozen=True, eq=False)
class StackResidualScorer:
    stack: GenerativeStack

    def __call__(self, lower_tokens, v: int, conditioning: Conditioning) -> np.ndarray:
        emb = embed_tokens(self.stack, lower_tokens)
        logits = forward(self.stack, conditioning.raw_text, conditioning.atomic, emb, v)
        return softmax(logits, axis=1)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def mask_schedule(step: int, total_steps: int, num_slots: int) -> int:
    """Slots still masked after ``step`` of ``total_steps``: ceil(N cos(pi/2 * n/S))."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"need 0 <= step <= total_steps and total_steps >= 1, got {step}/{total_steps}")
    if step == total_steps:
        return 0
    x = num_slots * math.cos(math.pi / 2 * step / total_steps)
    # absorb rounding noise so exact integers are not pushed up by ceil
    return min(num_slots, max(0, math.ceil(x - 1e-9)))


def _check_probs(probs: np.ndarray, N: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != N:
        raise InvalidScorerDistribution(f"scorer returned shape {probs.shape}, expected ({N}, C)")
    if not np.isfinite(probs).all() or (probs < 0).any():
        raise InvalidScorerDistribution("scorer returned negative or non-finite probabilities")
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > PROB_TOL
    if bad.any():
        r = int(np.argmax(bad))
        raise InvalidScorerDistribution(f"scorer row {r} sums to {sums[r]!r}")
    return probs


def _tempered(probs: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return probs
    with np.errstate(divide="ignore"):
        z = np.log(probs) / temperature
    z -= z.max(axis=1, keepdims=True)
    q = np.exp(z)
    return q / q.sum(axis=1, keepdims=True)


def sample_rows(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical sampling, one uniform per row."""
    cdf = np.cumsum(probs, axis=1)
    idx = np.array([np.searchsorted(c, u * c[-1], side="right") for c, u in zip(cdf, uniforms)], dtype=np.int64)
    return np.minimum(idx, probs.shape[1] - 1)


def decode_iterative(scorer: Scorer, num_slots: int, steps: int, temperature: float = 1.0,
                     seed: int = 0, conditioning=None, history: list | None = None) -> np.ndarray:
    """Fill an all-masked sequence of base tokens over ``steps`` iterations.

    Each step samples every masked slot (one uniform draw per masked slot,
    in slot order), records the scorer probability of the sampled token as
    that slot's confidence, and then keeps the ``N - mask_schedule(n+1)``
    most confident slots overall (ties keep the lower slot index).  Kept
    slots' confidences stay frozen until they are re-masked.  When given,
    ``history`` receives a boolean kept-mask per step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    N = num_slots
    rng = np.random.default_rng(seed)
    tokens = np.zeros(N, dtype=np.int64)
    mask = np.ones(N, dtype=bool)
    conf = np.zeros(N)
    slots = np.arange(N)
    for n in range(steps):
        probs = _check_probs(scorer(tokens.copy(), mask.copy(), conditioning), N)
        todo = np.flatnonzero(mask)
        if todo.size:
            u = rng.random(todo.size)
            picked = sample_rows(_tempered(probs[todo], temperature), u)
            tokens[todo] = picked
            conf[todo] = probs[todo, picked]
        keep = N - mask_schedule(n + 1, steps, N)
        order = np.lexsort((slots, -conf))
        mask = np.ones(N, dtype=bool)
        mask[order[:keep]] = False
        if history is not None:
            history.append(~mask)
    return tokens


def decode_residual(scorer: ResidualScorer, lower_tokens, layer: int, conditioning=None) -> np.ndarray:
    """Single argmax pass for residual layer ``layer`` given layers 0..layer-1."""
    lower = np.asarray(lower_tokens, dtype=np.int64)
    if lower.ndim == 1:
        lower = lower[:, None]
    if lower.shape[1] != layer:
        raise GenerativeError(f"layer {layer} needs {layer} lower layers, got {lower.shape[1]}")
    probs = _check_probs(scorer(lower, layer, conditioning), lower.shape[0])
    return np.argmax(probs, axis=1).astype(np.int64)


def decode_all(base_scorer: Scorer, residual_scorer: ResidualScorer | None, num_slots: int, steps: int,
               residual_layers: int, temperature: float = 1.0, seed: int = 0, conditioning=None) -> np.ndarray:
    """Base tokens by iterative decoding, then each residual layer in turn: N x (1 + R)."""
    base = decode_iterative(base_scorer, num_slots, steps, temperature, seed, conditioning)
    layers = [base]
    for v in range(1, residual_layers + 1):
        layers.append(decode_residual(residual_scorer, np.stack(layers, axis=1), v, conditioning))
    return np.stack(layers, axis=1)
