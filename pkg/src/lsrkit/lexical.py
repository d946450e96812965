"""Okapi BM25 baseline and additive run fusion.

BM25 runs over raw token-id corpora (no learned weights involved) and serves
both as a retrieval baseline and as the source of mined hard negatives.
Fusion re-ranks the union of two runs by summed scores.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    Corpus,
    RunList,
    Tokens,
    ValidationError,
    WarningCounter,
    rank_candidates,
)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if not math.isfinite(self.k1) or self.k1 <= 0:
            raise ValidationError(f"k1 must be finite and > 0, got {self.k1}")
        if not math.isfinite(self.b) or not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"b must lie in [0, 1], got {self.b}")


@dataclass
class Bm25Index:
    """Parameter-free collection statistics; read-only after build."""

    doc_ids: tuple[str, ...]
    doc_lens: np.ndarray  # int64 token counts per doc ordinal
    avgdl: float
    postings: dict[int, tuple[np.ndarray, np.ndarray]]  # term -> (ordinals, tfs)

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: int) -> float:
        pl = self.postings.get(term)
        df = pl[0].size if pl is not None else 0
        return math.log(1.0 + (self.size - df + 0.5) / (df + 0.5))


def build_bm25(corpus: Corpus) -> Bm25Index:
    doc_ids = tuple(corpus.keys())
    doc_lens = np.array([len(corpus[d]) for d in doc_ids], dtype=np.int64)
    acc: dict[int, tuple[list[int], list[float]]] = {}
    for ordinal, doc_id in enumerate(doc_ids):
        for term, tf in sorted(Counter(corpus[doc_id]).items()):
            ords, tfs = acc.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(float(tf))
    postings = {
        term: (np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
        for term, (ords, tfs) in sorted(acc.items())
    }
    total = int(doc_lens.sum())
    avgdl = (total / len(doc_ids)) if doc_ids and total else 1.0
    return Bm25Index(doc_ids=doc_ids, doc_lens=doc_lens, avgdl=avgdl, postings=postings)


def bm25_score_doc(
    bm: Bm25Index, query: Tokens, doc_ordinal: int, params: Bm25Params
) -> float:
    """Score one document; reference implementation used by the tests."""
    length = float(bm.doc_lens[doc_ordinal])
    norm = params.k1 * (1.0 - params.b + params.b * length / bm.avgdl)
    score = 0.0
    for term in query:
        pl = bm.postings.get(term)
        if pl is None:
            continue
        pos = np.searchsorted(pl[0], doc_ordinal)
        if pos >= pl[0].size or pl[0][pos] != doc_ordinal:
            continue
        tf = float(pl[1][pos])
        score += bm.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def bm25_retrieve(
    bm: Bm25Index, query: Tokens, params: Bm25Params, k: int
) -> list[tuple[str, float]]:
    """Exact top-k Okapi BM25, summed over query tokens with multiplicity.

    idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)), which is positive for every
    df, so any matching document scores > 0. Ties break by ascending doc id.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if bm.size == 0 or not query:
        return []
    norms = params.k1 * (1.0 - params.b + params.b * bm.doc_lens / bm.avgdl)
    acc = np.zeros(bm.size)
    touched = np.zeros(bm.size, dtype=bool)
    for term, q_count in sorted(Counter(query).items()):
        pl = bm.postings.get(term)
        if pl is None:
            continue
        ords, tfs = pl
        contrib = bm.idf(term) * tfs * (params.k1 + 1.0) / (tfs + norms[ords])
        acc[ords] += q_count * contrib
        touched[ords] = True
    cand = np.flatnonzero(touched)
    return rank_candidates(((bm.doc_ids[o], float(acc[o])) for o in cand.tolist()), k)


def bm25_run(
    bm: Bm25Index, queries: Corpus, params: Bm25Params, k: int
) -> RunList:
    return {qid: bm25_retrieve(bm, toks, params, k) for qid, toks in queries.items()}


def _minmax(ranked: Sequence[tuple[str, float]]) -> dict[str, float]:
    scores = [s for _, s in ranked]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return {d: 0.0 for d, _ in ranked}
    return {d: (s - lo) / (hi - lo) for d, s in ranked}


def fuse_sum(
    run_a: RunList,
    run_b: RunList,
    k: int,
    normalize: bool = False,
    warnings: WarningCounter | None = None,
) -> RunList:
    """Re-rank the union of two runs by summed scores, 0 for a missing side.

    Queries present in only one run are fused from that side alone and
    counted as warnings. Optional per-query min-max normalization rescales
    each side to [0, 1] first (degenerate constant runs map to 0).
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    fused: RunList = {}
    for qid in sorted(set(run_a) | set(run_b)):
        if qid not in run_a or qid not in run_b:
            if warnings is not None:
                warnings.bump("query-one-sided")
        side_a = run_a.get(qid, [])
        side_b = run_b.get(qid, [])
        if normalize:
            a = _minmax(side_a) if side_a else {}
            b = _minmax(side_b) if side_b else {}
        else:
            a = dict(side_a)
            b = dict(side_b)
        union = set(a) | set(b)
        fused[qid] = rank_candidates(
            ((d, a.get(d, 0.0) + b.get(d, 0.0)) for d in union), k
        )
    return fused
