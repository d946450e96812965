"""Hard-negative mining and the oracle teacher.

Triplets pair each training query with a judged-relevant positive and a hard
negative sampled from a retriever's top-k (never a judged-relevant doc).
Three candidate sources: BM25, the model's own retrieval, or a union over
several retrievers. Every triplet carries teacher scores.

The teacher stands in for a heavyweight cross-encoder: it has privileged
access to the generator's ground truth, scores (query, doc) token pairs by
topic-mixture cosine, and adds seeded Gaussian noise so its strength is
controllable. Deterministic for fixed inputs, sigma and seed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    ConfigError,
    Corpus,
    Qrels,
    Tokens,
    TripletRecord,
    ValidationError,
    WarningCounter,
    rank_dense,
)
from .datagen import GroundTruth
from .encoder import EncoderParams, Pooling, encode_batch_dense, encode_dense
from .lexical import Bm25Params, bm25_retrieve, build_bm25

Retriever = Callable[[Tokens], list[tuple[str, float]]]


class TeacherModel(Protocol):
    def score(self, q_tokens: Tokens, d_tokens: Tokens) -> float: ...


class MiningSource(str, Enum):
    BM25 = "bm25"
    SELF = "self"
    ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class MiningConfig:
    source: MiningSource
    top_k: int = 50
    negatives_per_query: int = 1
    triplets_per_query: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.negatives_per_query <= self.top_k:
            raise ValidationError("need top_k >= negatives_per_query >= 1")
        if self.triplets_per_query < 1:
            raise ValidationError("triplets_per_query must be >= 1")


def _stable_stream(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


class OracleTeacher:
    """Ground-truth topic-alignment scorer with optional Gaussian noise.

    Token sequences seen at construction (corpus docs and queries) resolve to
    their exact generative topic mixtures; unseen sequences fall back to the
    posterior over topics under the generator's term distributions. Noise is
    seeded per (query, doc) pair, so scores are reproducible in any order.
    """

    def __init__(
        self,
        ground_truth: GroundTruth,
        corpus: Corpus,
        queries: Corpus,
        sigma: float = 0.1,
        seed: int = 0,
    ):
        if not math.isfinite(sigma) or sigma < 0:
            raise ValidationError(f"sigma must be finite and >= 0, got {sigma}")
        self.sigma = sigma
        self.seed = seed
        self._log_topics = np.log(ground_truth.topics + 1e-300)
        self._lookup: dict[Tokens, np.ndarray] = {}
        for doc_id, toks in corpus.items():
            self._lookup.setdefault(tuple(toks), ground_truth.doc_mixture(doc_id))
        for qid, toks in queries.items():
            self._lookup.setdefault(tuple(toks), ground_truth.query_mixture(qid))

    def mixture_of(self, tokens: Tokens) -> np.ndarray:
        known = self._lookup.get(tuple(tokens))
        if known is not None:
            return known
        loglik = self._log_topics[:, list(tokens)].sum(axis=1)
        loglik -= loglik.max()
        post = np.exp(loglik)
        return post / post.sum()

    def score(self, q_tokens: Tokens, d_tokens: Tokens) -> float:
        mq = self.mixture_of(q_tokens)
        md = self.mixture_of(d_tokens)
        cos = float(mq @ md) / (float(np.linalg.norm(mq)) * float(np.linalg.norm(md)))
        if self.sigma == 0.0:
            return cos
        stream = _stable_stream(f"{self.seed}|{q_tokens!r}|{d_tokens!r}")
        noise = np.random.default_rng(stream).normal()
        return cos + self.sigma * float(noise)


def teacher_score(teacher: TeacherModel, q_tokens: Tokens, d_tokens: Tokens) -> float:
    return teacher.score(q_tokens, d_tokens)


def _mine_from_pools(
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
    cfg: MiningConfig,
    teacher: TeacherModel,
    pool_fn: Callable[[str], list[str]],
    warnings: WarningCounter,
) -> list[TripletRecord]:
    """Shared sampling core; queries processed in sorted id order, each with
    its own id-derived random stream so output is order-independent."""
    records: list[TripletRecord] = []
    for qid in sorted(queries):
        judged_relevant = {d for d, g in qrels.get(qid, {}).items() if g >= 1}
        if not judged_relevant:
            warnings.bump("query-no-relevant")
            continue
        pool = sorted(set(pool_fn(qid)) - judged_relevant)
        if not pool:
            warnings.bump("query-empty-pool")
            continue
        positives = sorted(judged_relevant)
        rng = np.random.default_rng([cfg.seed, _stable_stream(qid)])
        q_toks = queries[qid]
        for _ in range(cfg.triplets_per_query):
            pos = positives[int(rng.integers(len(positives)))]
            t_pos = teacher.score(q_toks, corpus[pos])
            for _ in range(cfg.negatives_per_query):
                neg = pool[int(rng.integers(len(pool)))]
                records.append(
                    TripletRecord(
                        query_id=qid,
                        pos_doc_id=pos,
                        neg_doc_id=neg,
                        teacher_pos=t_pos,
                        teacher_neg=teacher.score(q_toks, corpus[neg]),
                    )
                )
    return records


def mine_bm25(
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
    cfg: MiningConfig,
    teacher: TeacherModel,
    params: Bm25Params = Bm25Params(),
    warnings: WarningCounter | None = None,
) -> list[TripletRecord]:
    """Negatives sampled from the BM25 top-k, judged-relevant docs removed."""
    warnings = warnings if warnings is not None else WarningCounter()
    bm = build_bm25(corpus)

    def pool_fn(qid: str) -> list[str]:
        return [d for d, _ in bm25_retrieve(bm, queries[qid], params, cfg.top_k)]

    return _mine_from_pools(corpus, queries, qrels, cfg, teacher, pool_fn, warnings)


def mine_self(
    model: EncoderParams,
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
    cfg: MiningConfig,
    teacher: TeacherModel,
    pooling: Pooling,
    warnings: WarningCounter | None = None,
) -> list[TripletRecord]:
    """Negatives from the model's own top-k over its corpus encodings."""
    warnings = warnings if warnings is not None else WarningCounter()
    retr = make_model_retriever(model, corpus, cfg.top_k, pooling)

    def pool_fn(qid: str) -> list[str]:
        return [d for d, _ in retr(queries[qid])]

    return _mine_from_pools(corpus, queries, qrels, cfg, teacher, pool_fn, warnings)


def mine_ensemble(
    retrievers: Sequence[Retriever],
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
    cfg: MiningConfig,
    teacher: TeacherModel,
    warnings: WarningCounter | None = None,
) -> list[TripletRecord]:
    """Negatives from the union of every retriever's top-k candidates."""
    if len(retrievers) < 2:
        raise ConfigError("ensemble mining needs at least 2 retrievers")
    warnings = warnings if warnings is not None else WarningCounter()

    def pool_fn(qid: str) -> list[str]:
        pool: set[str] = set()
        for retr in retrievers:
            pool.update(d for d, _ in retr(queries[qid])[: cfg.top_k])
        return sorted(pool)

    return _mine_from_pools(corpus, queries, qrels, cfg, teacher, pool_fn, warnings)


def make_bm25_retriever(corpus: Corpus, k: int, params: Bm25Params = Bm25Params()) -> Retriever:
    bm = build_bm25(corpus)
    return lambda toks: bm25_retrieve(bm, toks, params, k)


def make_model_retriever(
    model: EncoderParams, corpus: Corpus, k: int, pooling: Pooling
) -> Retriever:
    """Top-k retriever scoring queries against the dense encoded corpus.

    Same candidates and tie order as inverted-index retrieval over the same
    encodings, but a single matrix product per query, which is far cheaper
    while model output is still near-dense.
    """
    doc_ids = np.array(list(corpus.keys()))
    reps = encode_batch_dense(model, list(corpus.values()), pooling)

    def retr(toks: Tokens) -> list[tuple[str, float]]:
        return rank_dense(doc_ids, reps @ encode_dense(model, toks, pooling), k)

    return retr


def mining_manifest(cfg: MiningConfig, retriever_ids: Sequence[str]) -> dict:
    """Provenance record written next to every triplet file."""
    return {
        "source": cfg.source.value,
        "top_k": cfg.top_k,
        "negatives_per_query": cfg.negatives_per_query,
        "triplets_per_query": cfg.triplets_per_query,
        "seed": cfg.seed,
        "retrievers": list(retriever_ids),
        "sampling": "uniform with replacement from the filtered pool",
        "note": "negatives per query and the sampling scheme are local choices",
    }
