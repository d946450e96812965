"""Deterministic synthetic benchmark generator.

Documents are token sequences drawn from a sparse topic model: each topic is
a Dirichlet draw over the input vocabulary, each document mixes one primary
topic with Dirichlet noise, and each query samples tokens from its source
document's dominant topic. Relevance is generative: the source document plus
every document whose topic mixture points the same way as the query's.

The generator also emits distribution-shifted corpora (fresh topics masked
off the training topics' top terms, skewed topic priors) for zero-shot
evaluation, and a ground-truth file that powers the oracle teacher.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import Corpus, Qrels, Tokens, ValidationError, WarningCounter

GROUNDTRUTH_FORMAT = "lsrkit-groundtruth"
GROUNDTRUTH_VERSION = 1

# Tokens per slab when assigning topics; bounds the (tokens, T) float buffer.
_TOKEN_SLAB = 100_000


@dataclass(frozen=True)
class GeneratorSpec:
    v_in: int = 2000
    v_out: int = 2000  # output vocabulary models trained on this benchmark use
    topics: int = 50
    docs: int = 10_000
    train_queries: int = 2000
    dev_queries: int = 500
    doc_len: tuple[int, int] = (30, 80)
    query_len: tuple[int, int] = (3, 8)
    topic_beta: float = 0.02  # per-topic Dirichlet over terms; small = peaky topics
    mixture_alpha: float = 0.01  # Dirichlet noise mixed into each doc's topic weights
    concentration: float = 0.6  # weight of the primary topic in the doc mixture
    relevance_threshold: float = 0.9  # mixture cosine granting grade 1
    # One (vocab shift fraction, topic-prior shift) pair per out-of-domain corpus.
    shifts: tuple[tuple[float, float], ...] = (
        (0.1, 0.3),
        (0.25, 0.5),
        (0.4, 0.7),
        (0.6, 1.0),
    )
    shift_docs: int = 2000
    shift_queries: int = 100
    shift_mask_top: int = 20  # terms per training topic masked out of fresh topics
    seed: int = 0

    def __post_init__(self):
        counts = {
            "v_in": self.v_in,
            "v_out": self.v_out,
            "topics": self.topics,
            "docs": self.docs,
            "train_queries": self.train_queries,
            "dev_queries": self.dev_queries,
            "shift_docs": self.shift_docs,
            "shift_queries": self.shift_queries,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValidationError(f"{name} must be positive, got {value}")
        for name, (lo, hi) in (("doc_len", self.doc_len), ("query_len", self.query_len)):
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} range invalid: ({lo}, {hi})")
        if not 0 < self.topic_beta or not 0 < self.mixture_alpha:
            raise ValidationError("Dirichlet parameters must be positive")
        if self.concentration < 0:
            raise ValidationError("concentration must be >= 0")
        if not 0 < self.relevance_threshold <= 1:
            raise ValidationError("relevance_threshold must lie in (0, 1]")
        for nu, rho in self.shifts:
            if not 0 <= nu <= 1 or not 0 <= rho <= 1:
                raise ValidationError("shift parameters must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "v_in": self.v_in,
            "v_out": self.v_out,
            "topics": self.topics,
            "docs": self.docs,
            "train_queries": self.train_queries,
            "dev_queries": self.dev_queries,
            "doc_len": list(self.doc_len),
            "query_len": list(self.query_len),
            "topic_beta": self.topic_beta,
            "mixture_alpha": self.mixture_alpha,
            "concentration": self.concentration,
            "relevance_threshold": self.relevance_threshold,
            "shifts": [list(s) for s in self.shifts],
            "shift_docs": self.shift_docs,
            "shift_queries": self.shift_queries,
            "shift_mask_top": self.shift_mask_top,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        kwargs = dict(data)
        if "doc_len" in kwargs:
            kwargs["doc_len"] = tuple(kwargs["doc_len"])
        if "query_len" in kwargs:
            kwargs["query_len"] = tuple(kwargs["query_len"])
        if "shifts" in kwargs:
            kwargs["shifts"] = tuple(tuple(s) for s in kwargs["shifts"])
        return cls(**kwargs)


@dataclass
class GroundTruth:
    """Generative state behind a benchmark; consumed only by the oracle teacher."""

    topics: np.ndarray  # (T, v_in), rows sum to 1
    doc_ids: tuple[str, ...]
    doc_mixtures: np.ndarray  # (N, T), rows sum to 1
    query_source: dict[str, str]  # query id -> source doc id
    query_topic: dict[str, int]  # query id -> dominant topic of source doc

    def __post_init__(self):
        for name, arr in (("topics", self.topics), ("doc_mixtures", self.doc_mixtures)):
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
                raise ValidationError(f"{name} rows must be distributions summing to 1")
        self._doc_ordinal = {d: i for i, d in enumerate(self.doc_ids)}

    def doc_mixture(self, doc_id: str) -> np.ndarray:
        return self.doc_mixtures[self._doc_ordinal[doc_id]]

    def query_mixture(self, query_id: str) -> np.ndarray:
        """One-hot on the query's topic: the dominant topic of its source doc.

        Query tokens are drawn from that single topic, so this vector is what
        the tokens actually signal; relevance and teacher scores both reduce
        to a document's purity on the query topic.
        """
        out = np.zeros(self.topics.shape[0], dtype=np.float64)
        out[self.query_topic[query_id]] = 1.0
        return out


@dataclass
class Benchmark:
    corpus: Corpus
    train_queries: Corpus
    dev_queries: Corpus
    qrels: Qrels
    ground_truth: GroundTruth
    warnings: WarningCounter = field(default_factory=WarningCounter)


@dataclass
class ShiftedBenchmark:
    name: str
    corpus: Corpus
    queries: Corpus
    qrels: Qrels
    vocab_shift: float
    prior_shift: float


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sample categorical indices; zero-probability entries are never chosen."""
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def _sample_rows(rng: np.random.Generator, dists: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """One categorical draw per element of ``rows``, where ``rows[i]`` picks the
    distribution in ``dists`` to draw from. Grouped per distribution so each
    group is a single vectorized inverse-CDF call."""
    u = rng.random(rows.size)
    out = np.empty(rows.size, dtype=np.int64)
    cdfs = np.cumsum(dists, axis=1)
    for r in np.unique(rows):
        mask = rows == r
        out[mask] = _inverse_cdf(cdfs[r], u[mask])
    return out


def _sample_mixture_rows(
    rng: np.random.Generator, mixtures: np.ndarray, row_per_token: np.ndarray
) -> np.ndarray:
    """Topic assignment per token, slab-wise to bound memory."""
    u = rng.random(row_per_token.size)
    cdfs = np.cumsum(mixtures, axis=1)
    out = np.empty(row_per_token.size, dtype=np.int64)
    for lo in range(0, row_per_token.size, _TOKEN_SLAB):
        hi = min(lo + _TOKEN_SLAB, row_per_token.size)
        slab = cdfs[row_per_token[lo:hi]]  # (slab, T)
        idx = (u[lo:hi, None] >= slab).sum(axis=1)
        out[lo:hi] = np.minimum(idx, mixtures.shape[1] - 1)
    return out


def _sample_documents(
    rng: np.random.Generator,
    topics: np.ndarray,
    mixtures: np.ndarray,
    lengths: np.ndarray,
) -> list[Tokens]:
    """Token sequences for one corpus: per-token topic, then per-topic term."""
    doc_of_token = np.repeat(np.arange(lengths.size), lengths)
    z = _sample_mixture_rows(rng, mixtures, doc_of_token)
    toks = _sample_rows(rng, topics, z)
    docs: list[Tokens] = []
    offsets = np.concatenate(([0], np.cumsum(lengths)))
    for i in range(lengths.size):
        docs.append(tuple(int(t) for t in toks[offsets[i] : offsets[i + 1]]))
    return docs


def _draw_mixtures(
    rng: np.random.Generator,
    spec: GeneratorSpec,
    n: int,
    prior: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """(primary topic per doc, normalized mixture per doc)."""
    t = spec.topics
    u = rng.random(n)
    primaries = _inverse_cdf(np.cumsum(prior), u)
    raw = rng.dirichlet(np.full(t, spec.mixture_alpha), size=n)
    mixtures = raw.copy()
    mixtures[np.arange(n), primaries] += spec.concentration
    mixtures /= mixtures.sum(axis=1, keepdims=True)
    return primaries, mixtures


def _relevance(
    qrels: Qrels,
    query_ids: list[str],
    query_mixtures: np.ndarray,
    source_docs: list[str],
    doc_ids: tuple[str, ...],
    doc_mixtures: np.ndarray,
    threshold: float,
) -> None:
    """Grade 1 for the source doc and every doc whose mixture cosine to the
    query topic vector reaches the threshold. Appends into ``qrels`` in place."""
    doc_unit = doc_mixtures / np.linalg.norm(doc_mixtures, axis=1, keepdims=True)
    q_unit = query_mixtures / np.linalg.norm(query_mixtures, axis=1, keepdims=True)
    chunk = 500
    for lo in range(0, len(query_ids), chunk):
        hi = min(lo + chunk, len(query_ids))
        sims = q_unit[lo:hi] @ doc_unit.T  # (chunk, N)
        for row, qi in enumerate(range(lo, hi)):
            judged = {source_docs[qi]: 1}
            for ordinal in np.flatnonzero(sims[row] >= threshold).tolist():
                judged[doc_ids[ordinal]] = 1
            qrels[query_ids[qi]] = judged


def _make_queries(
    rng: np.random.Generator,
    spec: GeneratorSpec,
    topics: np.ndarray,
    mixtures: np.ndarray,
    count: int,
    prefix: str,
) -> tuple[Corpus, list[int], list[int]]:
    """Queries drawn from source docs' dominant topics.

    Returns (queries, source doc ordinals, dominant topic per query).
    """
    n_docs = mixtures.shape[0]
    sources = rng.integers(0, n_docs, size=count)
    lengths = rng.integers(spec.query_len[0], spec.query_len[1] + 1, size=count)
    dominant = mixtures[sources].argmax(axis=1)
    topic_of_token = np.repeat(dominant, lengths)
    toks = _sample_rows(rng, topics, topic_of_token)
    queries: Corpus = {}
    offsets = np.concatenate(([0], np.cumsum(lengths)))
    for i in range(count):
        qid = f"{prefix}{i:06d}"
        queries[qid] = tuple(int(t) for t in toks[offsets[i] : offsets[i + 1]])
    return queries, sources.tolist(), dominant.tolist()


def generate(spec: GeneratorSpec) -> Benchmark:
    """In-domain benchmark: corpus, train/dev queries, qrels, ground truth.

    Bit-identical for equal specs: every random draw comes from generators
    seeded by (spec.seed, fixed stream tag) in a fixed order.
    """
    rng_topics = np.random.default_rng([spec.seed, 0])
    topics = rng_topics.dirichlet(np.full(spec.v_in, spec.topic_beta), size=spec.topics)

    rng_docs = np.random.default_rng([spec.seed, 1])
    prior = np.full(spec.topics, 1.0 / spec.topics)
    _, mixtures = _draw_mixtures(rng_docs, spec, spec.docs, prior)
    lengths = rng_docs.integers(spec.doc_len[0], spec.doc_len[1] + 1, size=spec.docs)
    doc_tokens = _sample_documents(rng_docs, topics, mixtures, lengths)
    doc_ids = tuple(f"d{i:06d}" for i in range(spec.docs))
    corpus: Corpus = dict(zip(doc_ids, doc_tokens))

    rng_q = np.random.default_rng([spec.seed, 2])
    train_queries, train_src, train_topic = _make_queries(
        rng_q, spec, topics, mixtures, spec.train_queries, "tq"
    )
    dev_queries, dev_src, dev_topic = _make_queries(
        rng_q, spec, topics, mixtures, spec.dev_queries, "dq"
    )

    qrels: Qrels = {}
    eye = np.eye(spec.topics, dtype=np.float64)
    for queries, sources, qtopics in (
        (train_queries, train_src, train_topic),
        (dev_queries, dev_src, dev_topic),
    ):
        qids = list(queries.keys())
        _relevance(
            qrels,
            qids,
            eye[np.asarray(qtopics)],
            [doc_ids[s] for s in sources],
            doc_ids,
            mixtures,
            spec.relevance_threshold,
        )

    query_source = {
        qid: doc_ids[src]
        for qid, src in zip(
            list(train_queries) + list(dev_queries), train_src + dev_src
        )
    }
    query_topic = {
        qid: int(t)
        for qid, t in zip(
            list(train_queries) + list(dev_queries), train_topic + dev_topic
        )
    }
    ground_truth = GroundTruth(
        topics=topics,
        doc_ids=doc_ids,
        doc_mixtures=mixtures,
        query_source=query_source,
        query_topic=query_topic,
    )
    warnings = WarningCounter()
    if spec.topics == 1:
        warnings.bump("single-topic-spec")
    return Benchmark(corpus, train_queries, dev_queries, qrels, ground_truth, warnings)


def _training_top_terms(topics: np.ndarray, per_topic: int) -> np.ndarray:
    """Union of each training topic's highest-probability terms."""
    top = np.argsort(-topics, axis=1)[:, :per_topic]
    return np.unique(top)


def generate_shifted(spec: GeneratorSpec, n_corpora: int | None = None) -> list[ShiftedBenchmark]:
    """Out-of-domain corpora with shifted term distributions and topic priors.

    Per corpus c with shift pair (nu, rho): fresh topics are drawn with zero
    mass on the training topics' top terms and blended as
    (1 - nu) * training + nu * fresh; the per-document primary-topic prior is
    blended from uniform toward a skewed Dirichlet draw by rho. Ids carry a
    per-corpus prefix, so nothing overlaps the in-domain benchmark.
    """
    if n_corpora is None:
        n_corpora = len(spec.shifts)
    if n_corpora < 2:
        raise ValidationError("zero-shot generation needs at least 2 corpora")
    if n_corpora > len(spec.shifts):
        raise ValidationError(
            f"spec provides {len(spec.shifts)} shift pairs, requested {n_corpora}"
        )
    rng_topics = np.random.default_rng([spec.seed, 0])
    topics = rng_topics.dirichlet(np.full(spec.v_in, spec.topic_beta), size=spec.topics)
    masked = _training_top_terms(topics, spec.shift_mask_top)
    free_terms = np.setdiff1d(np.arange(spec.v_in), masked)

    out: list[ShiftedBenchmark] = []
    for c in range(n_corpora):
        nu, rho = spec.shifts[c]
        rng = np.random.default_rng([spec.seed, 3, c])
        fresh_free = rng.dirichlet(
            np.full(free_terms.size, spec.topic_beta), size=spec.topics
        )
        fresh = np.zeros_like(topics)
        fresh[:, free_terms] = fresh_free
        blend = (1.0 - nu) * topics + nu * fresh
        blend /= blend.sum(axis=1, keepdims=True)

        skew = rng.dirichlet(np.full(spec.topics, 0.5))
        prior = (1.0 - rho) / spec.topics + rho * skew
        prior /= prior.sum()

        _, mixtures = _draw_mixtures(rng, spec, spec.shift_docs, prior)
        lengths = rng.integers(spec.doc_len[0], spec.doc_len[1] + 1, size=spec.shift_docs)
        doc_tokens = _sample_documents(rng, blend, mixtures, lengths)
        doc_ids = tuple(f"zs{c}-d{i:06d}" for i in range(spec.shift_docs))
        corpus: Corpus = dict(zip(doc_ids, doc_tokens))

        queries, sources, qtopics = _make_queries(
            rng, spec, blend, mixtures, spec.shift_queries, f"zs{c}-q"
        )
        qrels: Qrels = {}
        _relevance(
            qrels,
            list(queries.keys()),
            np.eye(spec.topics, dtype=np.float64)[np.asarray(qtopics)],
            [doc_ids[s] for s in sources],
            doc_ids,
            mixtures,
            spec.relevance_threshold,
        )
        out.append(
            ShiftedBenchmark(
                name=f"zs{c}",
                corpus=corpus,
                queries=queries,
                qrels=qrels,
                vocab_shift=nu,
                prior_shift=rho,
            )
        )
    return out


def save_ground_truth(path: str | Path, gt: GroundTruth) -> None:
    payload = {
        "format": GROUNDTRUTH_FORMAT,
        "version": GROUNDTRUTH_VERSION,
        "topics": gt.topics.tolist(),
        "doc_ids": list(gt.doc_ids),
        "doc_mixtures": gt.doc_mixtures.tolist(),
        "query_source": gt.query_source,
        "query_topic": gt.query_topic,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_ground_truth(path: str | Path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != GROUNDTRUTH_FORMAT:
        raise ValidationError(f"not a ground-truth file: {path}")
    if payload.get("version") != GROUNDTRUTH_VERSION:
        raise ValidationError(f"unsupported ground-truth version {payload.get('version')}")
    return GroundTruth(
        topics=np.array(payload["topics"], dtype=np.float64),
        doc_ids=tuple(payload["doc_ids"]),
        doc_mixtures=np.array(payload["doc_mixtures"], dtype=np.float64),
        query_source=dict(payload["query_source"]),
        query_topic={k: int(v) for k, v in payload["query_topic"].items()},
    )
