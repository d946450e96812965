"""Exact inverted-index retrieval over sparse vectors.

Term-at-a-time scoring with a dense accumulator: query terms are processed
in ascending term id, so every document's score is accumulated in the same
order a sequential two-pointer dot product would use. Retrieval therefore
reproduces brute-force scoring bit for bit, which the tests rely on.

Also hosts the retrieval-cost metric: the expected number of multiplications
per (query, document) pair, estimated from term activation frequencies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import SparseVec, ValidationError, rank_candidates

_MAGIC = b"LSRIDX"
_VERSION = 1


@dataclass
class PostingList:
    term_id: int
    ordinals: np.ndarray  # int64, strictly increasing doc ordinals
    weights: np.ndarray  # float64, > 0

    def __post_init__(self):
        if self.ordinals.shape != self.weights.shape or self.ordinals.ndim != 1:
            raise ValidationError("posting arrays must be parallel 1-d")
        if self.ordinals.size and np.any(np.diff(self.ordinals) <= 0):
            raise ValidationError(f"term {self.term_id}: ordinals not strictly increasing")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValidationError(f"term {self.term_id}: weights must be finite and > 0")


@dataclass
class InvertedIndex:
    """Immutable after build; safe for concurrent readers."""

    doc_ids: tuple[str, ...]
    postings: dict[int, PostingList]  # keyed by term id

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    @property
    def nnz(self) -> int:
        return sum(p.ordinals.size for p in self.postings.values())

    def activation_fraction(self, term_id: int) -> float:
        """Fraction of corpus documents with a nonzero weight for the term."""
        if self.size == 0:
            return 0.0
        pl = self.postings.get(term_id)
        return (pl.ordinals.size / self.size) if pl is not None else 0.0


def build(encoded_docs: Iterable[tuple[str, SparseVec]]) -> InvertedIndex:
    """Invert (doc_id, SparseVec) pairs into per-term posting lists."""
    doc_ids: list[str] = []
    seen: set[str] = set()
    acc: dict[int, tuple[list[int], list[float]]] = {}
    for ordinal, (doc_id, vec) in enumerate(encoded_docs):
        if doc_id in seen:
            raise ValidationError(f"duplicate doc id in index build: {doc_id}")
        seen.add(doc_id)
        doc_ids.append(doc_id)
        for term, weight in vec.items():
            ords, wts = acc.setdefault(term, ([], []))
            ords.append(ordinal)
            wts.append(weight)
    postings = {
        term: PostingList(
            term_id=term,
            ordinals=np.asarray(ords, dtype=np.int64),
            weights=np.asarray(wts, dtype=np.float64),
        )
        for term, (ords, wts) in sorted(acc.items())
    }
    return InvertedIndex(doc_ids=tuple(doc_ids), postings=postings)


def build_from_dense(doc_ids: Sequence[str], dense: np.ndarray) -> InvertedIndex:
    """Invert a dense (docs, vocab) matrix of non-negative weights.

    Produces the same index as ``build`` over pruned rows, but works per
    vocabulary column instead of per document entry, which is much faster
    for near-dense model output.
    """
    if len(set(doc_ids)) != len(doc_ids):
        raise ValidationError("duplicate doc id in index build")
    mat = np.asarray(dense, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != len(doc_ids):
        raise ValidationError("dense matrix must be (len(doc_ids), vocab)")
    if not np.all(np.isfinite(mat)) or np.any(mat < 0):
        raise ValidationError("dense weights must be finite and >= 0")
    postings: dict[int, PostingList] = {}
    for term in range(mat.shape[1]):
        col = mat[:, term]
        ords = np.flatnonzero(col > 0)
        if ords.size:
            postings[term] = PostingList(
                term_id=term,
                ordinals=ords.astype(np.int64),
                weights=col[ords],
            )
    return InvertedIndex(doc_ids=tuple(doc_ids), postings=postings)


def reconstruct_docs(index: InvertedIndex) -> dict[str, SparseVec]:
    """Rebuild every document's sparse vector from the posting lists."""
    pairs: dict[int, list[tuple[int, float]]] = {i: [] for i in range(index.size)}
    for term in sorted(index.postings):
        pl = index.postings[term]
        for o, w in zip(pl.ordinals.tolist(), pl.weights.tolist()):
            pairs[o].append((term, w))
    return {
        index.doc_ids[o]: SparseVec.from_pairs(items) for o, items in pairs.items()
    }


def retrieve(index: InvertedIndex, q_vec: SparseVec, k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product; ties by ascending doc id, zero scores omitted.

    Accumulates query terms in ascending term id so float rounding matches a
    sequential dot product over the shared support exactly.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if index.size == 0 or not q_vec.term_ids:
        return []
    acc = np.zeros(index.size)
    touched = np.zeros(index.size, dtype=bool)
    for term, q_weight in q_vec.items():
        pl = index.postings.get(term)
        if pl is None:
            continue
        acc[pl.ordinals] += q_weight * pl.weights
        touched[pl.ordinals] = True
    cand = np.flatnonzero(touched & (acc != 0.0))
    return rank_candidates(
        ((index.doc_ids[o], float(acc[o])) for o in cand.tolist()), k
    )


def estimate_flops(index: InvertedIndex, query_sample: Sequence[SparseVec]) -> float:
    """Expected multiplications per (query, doc) scoring: sum over terms of
    P(term active in query) * P(term active in doc), both estimated
    empirically. Equals the mean support overlap over the full cross product.
    """
    if not query_sample:
        raise ValidationError("empty query sample")
    if index.size == 0:
        raise ValidationError("empty index")
    q_df: dict[int, int] = {}
    for vec in query_sample:
        for term in vec.term_ids:
            q_df[term] = q_df.get(term, 0) + 1
    n_q = len(query_sample)
    total = 0.0
    for term in sorted(q_df):
        pl = index.postings.get(term)
        if pl is None:
            continue
        total += (q_df[term] / n_q) * (pl.ordinals.size / index.size)
    return total


def quantized(index: InvertedIndex) -> InvertedIndex:
    """Optional 8-bit linear weight quantization (lossy, per-term scale).

    Returns a new index whose weights are the dequantized values; retrieval
    exactness guarantees do not apply to a quantized index.
    """
    postings: dict[int, PostingList] = {}
    for term, pl in index.postings.items():
        lo = float(pl.weights.min())
        hi = float(pl.weights.max())
        if hi == lo:
            wts = pl.weights.copy()
        else:
            scale = (hi - lo) / 255.0
            codes = np.round((pl.weights - lo) / scale)
            wts = lo + codes * scale
            # keep weights strictly positive after rounding toward lo
            wts = np.maximum(wts, np.nextafter(0.0, 1.0))
        postings[term] = PostingList(term, pl.ordinals.copy(), wts)
    return InvertedIndex(doc_ids=index.doc_ids, postings=postings)


def _write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValidationError("varint must be nonnegative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ValidationError("truncated index file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_index(path: str | Path, index: InvertedIndex) -> None:
    """Versioned binary serialization; round-trips bit-exactly.

    Layout: magic, version, N, term count, total postings; doc id table;
    per term (ascending): term id, length, delta-encoded ordinals, raw
    float64 weights.
    """
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<IQQQ", _VERSION, index.size, len(index.postings), index.nnz)
    for doc_id in index.doc_ids:
        raw = doc_id.encode("utf-8")
        _write_varint(out, len(raw))
        out += raw
    for term in sorted(index.postings):
        pl = index.postings[term]
        _write_varint(out, term)
        _write_varint(out, pl.ordinals.size)
        prev = -1
        for o in pl.ordinals.tolist():
            _write_varint(out, o - prev - 1)
            prev = o
        out += np.ascontiguousarray(pl.weights, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_index(path: str | Path) -> InvertedIndex:
    buf = Path(path).read_bytes()
    if buf[: len(_MAGIC)] != _MAGIC:
        raise ValidationError(f"not an index file: {path}")
    pos = len(_MAGIC)
    version, n_docs, n_terms, nnz = struct.unpack_from("<IQQQ", buf, pos)
    pos += struct.calcsize("<IQQQ")
    if version != _VERSION:
        raise ValidationError(f"unsupported index version {version}")
    doc_ids: list[str] = []
    for _ in range(n_docs):
        length, pos = _read_varint(buf, pos)
        doc_ids.append(buf[pos : pos + length].decode("utf-8"))
        pos += length
    postings: dict[int, PostingList] = {}
    for _ in range(n_terms):
        term, pos = _read_varint(buf, pos)
        length, pos = _read_varint(buf, pos)
        ordinals = np.empty(length, dtype=np.int64)
        prev = -1
        for i in range(length):
            gap, pos = _read_varint(buf, pos)
            prev = prev + gap + 1
            ordinals[i] = prev
        nbytes = 8 * length
        if pos + nbytes > len(buf):
            raise ValidationError("truncated index file")
        weights = np.frombuffer(buf[pos : pos + nbytes], dtype="<f8").astype(np.float64)
        pos += nbytes
        postings[term] = PostingList(term, ordinals, weights)
    index = InvertedIndex(doc_ids=tuple(doc_ids), postings=postings)
    if index.nnz != nnz:
        raise ValidationError("index file posting count disagrees with header")
    return index
