"""Trainable term-importance encoder.

A single embedding lookup, one scaled dot-product mixing layer and a linear
vocabulary projection produce per-token importance logits; representations
are pooled with ``max`` or ``sum`` over log(1 + ReLU(logit)). Gradients are
analytic (no autodiff) and verified against finite differences in the tests.

Query and document sides share one parameter set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SparseVec, Tokens, ValidationError, dot, prune, validate_tokens

CHECKPOINT_FORMAT = "lsrkit-encoder"
CHECKPOINT_VERSION = 1

# Items per internal slab when encoding large batches; bounds the transient
# (items x max_len x vocab) buffers.
_SLAB = 32


class Pooling(str, Enum):
    MAX = "max"
    SUM = "sum"


@dataclass
class EncoderParams:
    """All trainable arrays. Treated as immutable during inference."""

    e: np.ndarray  # (v_in, hidden) input embeddings
    a_q: np.ndarray  # (hidden, hidden) attention query projection
    a_k: np.ndarray  # (hidden, hidden) attention key projection
    p: np.ndarray  # (hidden, v_out) vocabulary projection
    b: np.ndarray  # (v_out,) output bias

    def __post_init__(self):
        h = self.e.shape[1]
        if self.a_q.shape != (h, h) or self.a_k.shape != (h, h):
            raise ValidationError("attention projections must be (hidden, hidden)")
        if self.p.shape[0] != h:
            raise ValidationError("projection rows must match hidden width")
        if self.b.shape != (self.p.shape[1],):
            raise ValidationError("bias length must match output vocabulary")
        for name in ("e", "a_q", "a_k", "p", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"non-finite entries in {name}")

    @property
    def v_in(self) -> int:
        return self.e.shape[0]

    @property
    def v_out(self) -> int:
        return self.p.shape[1]

    @property
    def hidden(self) -> int:
        return self.e.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.e.copy(), self.a_q.copy(), self.a_k.copy(), self.p.copy(), self.b.copy()
        )


@dataclass
class EncoderGrads:
    e: np.ndarray
    a_q: np.ndarray
    a_k: np.ndarray
    p: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "EncoderGrads":
        return cls(
            np.zeros_like(params.e),
            np.zeros_like(params.a_q),
            np.zeros_like(params.a_k),
            np.zeros_like(params.p),
            np.zeros_like(params.b),
        )

    def iadd(self, other: "EncoderGrads") -> None:
        self.e += other.e
        self.a_q += other.a_q
        self.a_k += other.a_k
        self.p += other.p
        self.b += other.b


def init_params(v_in: int, v_out: int, hidden: int, seed: int) -> EncoderParams:
    """Seeded uniform(-0.5/sqrt(h), 0.5/sqrt(h)) init, zero bias."""
    if v_in < 1 or v_out < 2 or hidden < 1:
        raise ValidationError("invalid encoder dimensions")
    rng = np.random.default_rng(seed)
    bound = 0.5 / math.sqrt(hidden)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shape)

    return EncoderParams(
        e=u(v_in, hidden),
        a_q=u(hidden, hidden),
        a_k=u(hidden, hidden),
        p=u(hidden, v_out),
        b=np.zeros(v_out),
    )


def _pad_batch(params: EncoderParams, batch: Sequence[Tokens]):
    lens = [len(t) for t in batch]
    for i, toks in enumerate(batch):
        validate_tokens(toks, params.v_in, what=f"item {i}")
    n, l_max = len(batch), max(lens)
    tok = np.zeros((n, l_max), dtype=np.int64)
    valid = np.zeros((n, l_max), dtype=bool)
    for i, toks in enumerate(batch):
        tok[i, : lens[i]] = toks
        valid[i, : lens[i]] = True
    return tok, valid


def _forward(params: EncoderParams, tok: np.ndarray, valid: np.ndarray):
    """Shared forward pass over a padded batch, up to the importance logits."""
    h = params.hidden
    x = params.e[tok]  # (n, l, h)
    u = x @ params.a_q.T
    k = x @ params.a_k.T
    z = u @ k.transpose(0, 2, 1) / math.sqrt(h)  # (n, l, l)
    z = np.where(valid[:, None, :], z, -np.inf)
    z_max = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - z_max)
    attn = ez / ez.sum(axis=-1, keepdims=True)
    c = attn @ x
    w = c @ params.p + params.b  # (n, l, v_out)
    return x, u, k, attn, c, w


def _masked_max(w: np.ndarray, valid: np.ndarray, want_argmax: bool):
    """Per-term max logit over valid tokens, optionally with its (first)
    position. Valid tokens are a prefix of each row, so the reduction runs
    on contiguous slices instead of a masked strided scan."""
    n, _, v = w.shape
    m = np.empty((n, v))
    am = np.empty((n, v), dtype=np.int64) if want_argmax else None
    for i in range(n):
        rows = w[i, : int(valid[i].sum())]
        if want_argmax:
            am[i] = rows.argmax(axis=0)
            m[i] = np.take_along_axis(rows, am[i][None, :], axis=0)[0]
        else:
            m[i] = rows.max(axis=0)
    return m, am


def _pool_logits(w: np.ndarray, valid: np.ndarray, mode: Pooling) -> np.ndarray:
    """Pooled log(1 + ReLU(logit)) representations.

    Max pooling commutes with the monotone activation, so the max is taken
    on the raw logits and log1p applied once per output term instead of per
    (token, term) cell; sum pooling applies it only where the ReLU is live.
    """
    if mode == Pooling.MAX:
        m, _ = _masked_max(w, valid, want_argmax=False)
        return np.log1p(np.maximum(m, 0.0))
    act = np.zeros_like(w)
    np.log1p(w, out=act, where=(w > 0.0) & valid[:, :, None])
    return act.sum(axis=1)


def importance_logits(params: EncoderParams, tokens: Tokens) -> np.ndarray:
    """Per-token importance logits, shape (len(tokens), v_out)."""
    tok, valid = _pad_batch(params, [tuple(tokens)])
    return _forward(params, tok, valid)[-1][0]


def encode_batch_dense(
    params: EncoderParams, batch: Sequence[Tokens], mode: Pooling
) -> np.ndarray:
    """Dense pooled representations, shape (len(batch), v_out).

    Items are slabbed in length order so each slab carries little padding;
    an item's representation only ever sees its own tokens (attention over
    padding is masked out), so the grouping does not affect the output.
    """
    out = np.empty((len(batch), params.v_out))
    order = sorted(range(len(batch)), key=lambda i: len(batch[i]))
    for lo in range(0, len(batch), _SLAB):
        idx = order[lo : lo + _SLAB]
        tok, valid = _pad_batch(params, [batch[i] for i in idx])
        w = _forward(params, tok, valid)[-1]
        out[idx] = _pool_logits(w, valid, mode)
    return out


def encode_dense(params: EncoderParams, tokens: Tokens, mode: Pooling) -> np.ndarray:
    return encode_batch_dense(params, [tuple(tokens)], mode)[0]


def encode(params: EncoderParams, tokens: Tokens, mode: Pooling) -> SparseVec:
    """Pooled sparse representation with zeros pruned."""
    return prune(encode_dense(params, tokens, mode))


def score(params: EncoderParams, q_tokens: Tokens, d_vec: SparseVec, mode: Pooling) -> float:
    """Ranking score: dot product of the encoded query with a document vector."""
    return dot(encode(params, q_tokens, mode), d_vec)


def encode_corpus(
    params: EncoderParams, corpus: dict[str, Tokens], mode: Pooling
) -> list[tuple[str, SparseVec]]:
    """Encode every document to a pruned sparse vector, in corpus order."""
    ids = list(corpus.keys())
    reps = encode_batch_dense(params, [corpus[d] for d in ids], mode)
    return [(doc_id, prune(reps[i])) for i, doc_id in enumerate(ids)]


@dataclass
class ForwardCache:
    """Per-slab intermediates kept alive between a forward and its backward.

    Trades memory (for sum pooling the saturation array is (n, l, v_out) per
    slab) for not running the forward pass twice per training step.
    """

    mode: Pooling
    n: int
    v_out: int
    slabs: list[tuple]  # (tok, valid, x, u, k, attn, c, pool_state)


def _slab_parts(params: EncoderParams, tok, valid, mode: Pooling):
    """(pooled reps, backward slab tuple) for one padded slab.

    The pool state is (argmax, saturation-at-argmax) for max pooling and the
    full saturation array for sum pooling; saturation is d act/d logit, zero
    wherever the ReLU gate is closed or the token is padding.
    """
    x, u, k, attn, c, w = _forward(params, tok, valid)
    if mode == Pooling.MAX:
        m, am = _masked_max(w, valid, want_argmax=True)
        pooled = np.log1p(np.maximum(m, 0.0))
        sat_am = (m > 0.0) / (1.0 + np.maximum(m, 0.0))
        state: tuple | np.ndarray = (am, sat_am)
    else:
        pos = (w > 0.0) & valid[:, :, None]
        act = np.zeros_like(w)
        np.log1p(w, out=act, where=pos)
        pooled = act.sum(axis=1)
        sat = np.zeros_like(w)
        np.divide(1.0, 1.0 + w, out=sat, where=pos)
        state = sat
    return pooled, (tok, valid, x, u, k, attn, c, state)


def encode_batch_cached(
    params: EncoderParams, batch: Sequence[Tokens], mode: Pooling
) -> tuple[np.ndarray, ForwardCache]:
    """Like ``encode_batch_dense`` but keeps what the backward pass needs."""
    out = np.empty((len(batch), params.v_out))
    cache = ForwardCache(mode=mode, n=len(batch), v_out=params.v_out, slabs=[])
    for lo in range(0, len(batch), _SLAB):
        chunk = batch[lo : lo + _SLAB]
        tok, valid = _pad_batch(params, chunk)
        pooled, parts = _slab_parts(params, tok, valid, mode)
        out[lo : lo + len(chunk)] = pooled
        cache.slabs.append(parts)
    return out, cache


def _check_upstream(upstream: np.ndarray, n: int, v_out: int) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n, v_out):
        raise ValidationError("upstream gradient shape mismatch")
    if not np.all(np.isfinite(upstream)):
        raise ValidationError("upstream gradient has non-finite entries")
    return upstream


def encode_backward_cached(
    params: EncoderParams, cache: ForwardCache, upstream: np.ndarray
) -> EncoderGrads:
    """Backward pass reusing the intermediates of ``encode_batch_cached``."""
    upstream = _check_upstream(upstream, cache.n, cache.v_out)
    total = EncoderGrads.zeros_like(params)
    lo = 0
    for parts in cache.slabs:
        n_slab = parts[0].shape[0]
        total.iadd(
            _backward_parts(params, cache.mode, parts, upstream[lo : lo + n_slab])
        )
        lo += n_slab
    return total


def encode_backward_batch(
    params: EncoderParams,
    batch: Sequence[Tokens],
    mode: Pooling,
    upstream: np.ndarray,
) -> EncoderGrads:
    """Gradient of sum_i <pooled_i, upstream_i> with respect to all parameters.

    Max pooling routes gradient through the argmax token per term, ties to
    the lowest token index; terms whose logits are all <= 0 get none.
    """
    upstream = _check_upstream(upstream, len(batch), params.v_out)
    total = EncoderGrads.zeros_like(params)
    for lo in range(0, len(batch), _SLAB):
        chunk = batch[lo : lo + _SLAB]
        tok, valid = _pad_batch(params, chunk)
        _, parts = _slab_parts(params, tok, valid, mode)
        total.iadd(_backward_parts(params, mode, parts, upstream[lo : lo + len(chunk)]))
    return total


def encode_backward(
    params: EncoderParams, tokens: Tokens, mode: Pooling, upstream: np.ndarray
) -> EncoderGrads:
    return encode_backward_batch(params, [tuple(tokens)], mode, np.asarray(upstream)[None, :])


def _backward_parts(
    params: EncoderParams,
    mode: Pooling,
    parts: tuple,
    upstream: np.ndarray,
) -> EncoderGrads:
    h = params.hidden
    tok, valid, x, u, k, attn, c, state = parts
    n, l = tok.shape
    v = params.v_out

    # dL/dw_{ij}: saturation derivative gated by ReLU, routed per pooling mode.
    if mode == Pooling.MAX:
        # Padded rows are masked out of the max, so the argmax is always a
        # real token; when no logit is positive the saturation there is 0.
        am, sat_am = state
        g = np.zeros((n, l, v))
        np.put_along_axis(g, am[:, None, :], (upstream * sat_am)[:, None, :], axis=1)
    else:
        g = upstream[:, None, :] * state

    g_p = c.reshape(-1, h).T @ g.reshape(-1, v)
    g_b = g.sum(axis=(0, 1))

    d_c = g @ params.p.T  # (n, l, h)
    d_attn = d_c @ x.transpose(0, 2, 1)  # (n, l, l)
    d_z = attn * (d_attn - np.sum(attn * d_attn, axis=-1, keepdims=True))
    d_u = d_z @ k / math.sqrt(h)
    d_k = d_z.transpose(0, 2, 1) @ u / math.sqrt(h)

    g_aq = d_u.reshape(-1, h).T @ x.reshape(-1, h)
    g_ak = d_k.reshape(-1, h).T @ x.reshape(-1, h)

    d_x = attn.transpose(0, 2, 1) @ d_c + d_u @ params.a_q + d_k @ params.a_k
    g_e = np.zeros_like(params.e)
    np.add.at(g_e, tok[valid], d_x[valid])

    return EncoderGrads(e=g_e, a_q=g_aq, a_k=g_ak, p=g_p, b=g_b)


def save_checkpoint(
    path: str | Path, params: EncoderParams, pooling: Pooling | None = None
) -> None:
    """JSON checkpoint; float repr round-trips exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "v_in": params.v_in,
        "v_out": params.v_out,
        "hidden": params.hidden,
        "pooling": pooling.value if pooling is not None else None,
        "e": params.e.tolist(),
        "a_q": params.a_q.tolist(),
        "a_k": params.a_k.tolist(),
        "p": params.p.tolist(),
        "b": params.b.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, Pooling | None]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not an encoder checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    params = EncoderParams(
        e=np.array(payload["e"], dtype=np.float64),
        a_q=np.array(payload["a_q"], dtype=np.float64),
        a_k=np.array(payload["a_k"], dtype=np.float64),
        p=np.array(payload["p"], dtype=np.float64),
        b=np.array(payload["b"], dtype=np.float64),
    )
    if (params.v_in, params.v_out, params.hidden) != (
        payload["v_in"],
        payload["v_out"],
        payload["hidden"],
    ):
        raise ValidationError("checkpoint dimension header disagrees with arrays")
    pooling = Pooling(payload["pooling"]) if payload.get("pooling") else None
    return params, pooling
