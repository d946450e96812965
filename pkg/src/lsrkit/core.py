"""Domain types and sparse-vector algebra shared by every module.

Corpora and query sets are plain ``dict[str, tuple[int, ...]]`` (id -> token
ids), qrels are ``dict[str, dict[str, int]]`` (query id -> doc id -> grade)
and run lists are ``dict[str, list[tuple[str, float]]]`` with scores
non-increasing and ties broken by ascending doc id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Tokens = tuple[int, ...]
Corpus = dict[str, Tokens]
Qrels = dict[str, dict[str, int]]
RunList = dict[str, list[tuple[str, float]]]


class ValidationError(ValueError):
    """An in-memory object violates a documented invariant."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or incompatible with its inputs."""


class ParseError(ValueError):
    """A file does not conform to its format grammar."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif path is not None:
            where += " "
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class Vocab:
    """Output vocabulary: dense term ids 0..size-1."""

    terms: tuple[str, ...]

    def __post_init__(self):
        if len(self.terms) < 2:
            raise ValidationError("vocabulary needs at least 2 terms")
        if len(set(self.terms)) != len(self.terms):
            raise ValidationError("vocabulary contains duplicate terms")

    @property
    def size(self) -> int:
        return len(self.terms)

    @classmethod
    def synthetic(cls, size: int, prefix: str = "term") -> "Vocab":
        width = len(str(max(size - 1, 0)))
        return cls(tuple(f"{prefix}{i:0{width}d}" for i in range(size)))


@dataclass(frozen=True)
class SparseVec:
    """Pruned sparse term-weight vector: strictly increasing term ids, weights > 0."""

    term_ids: Tokens = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.term_ids) != len(self.weights):
            raise ValidationError("term_ids and weights length mismatch")
        prev = -1
        for t in self.term_ids:
            if t <= prev:
                raise ValidationError("term ids must be strictly increasing")
            prev = t
        for w in self.weights:
            if not math.isfinite(w):
                raise ValidationError("weights must be finite")
            if w <= 0.0:
                raise ValidationError("stored weights must be > 0 (zeros are pruned)")

    def __len__(self) -> int:
        return len(self.term_ids)

    def __bool__(self) -> bool:
        return len(self.term_ids) > 0

    def items(self) -> Iterable[tuple[int, float]]:
        return zip(self.term_ids, self.weights)

    def ids_array(self) -> np.ndarray:
        return np.asarray(self.term_ids, dtype=np.int64)

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVec":
        pairs = sorted(pairs)
        return cls(tuple(t for t, _ in pairs), tuple(float(w) for _, w in pairs))


def prune(dense: Sequence[float] | np.ndarray) -> SparseVec:
    """Drop exact zeros from a dense nonnegative vector.

    Raises ValidationError on negative or non-finite entries.
    """
    arr = np.asarray(dense, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError("expected a 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("dense vector has non-finite entries")
    if np.any(arr < 0):
        raise ValidationError("dense vector has negative entries")
    idx = np.nonzero(arr)[0]
    return SparseVec(tuple(int(i) for i in idx), tuple(float(x) for x in arr[idx]))


def densify(vec: SparseVec, size: int) -> np.ndarray:
    """Inverse of prune for vectors whose support fits in ``size``."""
    out = np.zeros(size, dtype=np.float64)
    for t, w in vec.items():
        if t >= size:
            raise ValidationError(f"term id {t} out of range for size {size}")
        out[t] = w
    return out


def dot(a: SparseVec, b: SparseVec) -> float:
    """Sparse dot product, accumulated in ascending term-id order.

    The accumulation order matches the inverted index's term-at-a-time
    traversal, so index scores and dot products agree bit-exactly.
    """
    total = 0.0
    i, j = 0, 0
    ai, bi = a.term_ids, b.term_ids
    while i < len(ai) and j < len(bi):
        if ai[i] == bi[j]:
            total += a.weights[i] * b.weights[j]
            i += 1
            j += 1
        elif ai[i] < bi[j]:
            i += 1
        else:
            j += 1
    return total


@dataclass(frozen=True)
class TripletRecord:
    """One (query, positive, negative) training example, optionally teacher-scored."""

    query_id: str
    pos_doc_id: str
    neg_doc_id: str
    teacher_pos: float | None = None
    teacher_neg: float | None = None

    def __post_init__(self):
        if self.pos_doc_id == self.neg_doc_id:
            raise ValidationError("positive and negative doc ids must differ")
        if (self.teacher_pos is None) != (self.teacher_neg is None):
            raise ValidationError("teacher scores must be both present or both absent")

    @property
    def has_teacher(self) -> bool:
        return self.teacher_pos is not None


def validate_tokens(tokens: Sequence[int], v_in: int, what: str = "record") -> Tokens:
    """Check token ids against the input-vocabulary bound."""
    toks = tuple(int(t) for t in tokens)
    if not toks:
        raise ValidationError(f"{what} has no tokens")
    for t in toks:
        if t < 0 or t >= v_in:
            raise ValidationError(f"{what} token id {t} out of range [0, {v_in})")
    return toks


def validate_collection(collection: Corpus, v_in: int) -> None:
    for cid, tokens in collection.items():
        validate_tokens(tokens, v_in, what=cid)


def validate_qrels(qrels: Qrels) -> None:
    for qid, judged in qrels.items():
        for did, grade in judged.items():
            if grade < 0:
                raise ValidationError(f"qrels grade for ({qid}, {did}) is negative")


def rank_candidates(scored: Iterable[tuple[str, float]], k: int) -> list[tuple[str, float]]:
    """Top-k by descending score, ties broken by ascending doc id."""
    ordered = sorted(scored, key=lambda item: (-item[1], item[0]))
    return ordered[:k]


def rank_dense(ids: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[str, float]]:
    """``rank_candidates`` over a dense score vector, in C instead of Python.

    Candidates are the strictly positive scores; the ordering (descending
    score, ties by ascending id string) matches ``rank_candidates`` exactly.
    """
    cand = np.flatnonzero(scores > 0.0)
    if cand.size == 0:
        return []
    order = np.lexsort((ids[cand], -scores[cand]))[:k]
    picked = cand[order]
    return [(str(ids[o]), float(scores[o])) for o in picked]


def validate_run(run: RunList) -> None:
    for qid, ranked in run.items():
        seen: set[str] = set()
        prev_score: float | None = None
        prev_doc: str | None = None
        for did, score in ranked:
            if did in seen:
                raise ValidationError(f"duplicate doc {did} in run for query {qid}")
            seen.add(did)
            if prev_score is not None:
                if score > prev_score:
                    raise ValidationError(f"scores increase within run for query {qid}")
                if score == prev_score and prev_doc is not None and did < prev_doc:
                    raise ValidationError(
                        f"tie not broken by ascending doc id for query {qid}"
                    )
            prev_score, prev_doc = score, did


@dataclass
class WarningCounter:
    """Counts non-fatal events (skipped queries, one-sided fusions, ...)."""

    counts: dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, n: int = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + n

    def total(self) -> int:
        return sum(self.counts.values())
