"""Text file formats: corpus/query TSV, TREC qrels, TREC runs, triplet TSV.

Writers emit floats with 6 decimal digits and preserve input ordering, so a
deterministic producer yields byte-identical files across runs. Readers
report malformed lines with their 1-based line number.
"""

from __future__ import annotations

from pathlib import Path

from .core import Corpus, ParseError, Qrels, RunList, TripletRecord, validate_run

SCORE_FMT = "{:.6f}"


def _lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return text.splitlines()


def write_texts(path: str | Path, collection: Corpus) -> None:
    """Corpus/queries TSV: ``<id>\\t<space-separated token ids>``."""
    with open(path, "w", encoding="utf-8") as fh:
        for cid, tokens in collection.items():
            fh.write(f"{cid}\t{' '.join(str(t) for t in tokens)}\n")


def read_texts(path: str | Path) -> Corpus:
    out: Corpus = {}
    for ln, line in enumerate(_lines(path), start=1):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ParseError("expected '<id>\\t<token ids>'", str(path), ln)
        cid, toks = parts
        fields = toks.split()
        if not fields:
            raise ParseError(f"record {cid} has no tokens", str(path), ln)
        try:
            tokens = tuple(int(t) for t in fields)
        except ValueError:
            raise ParseError(f"non-integer token id in record {cid}", str(path), ln)
        if any(t < 0 for t in tokens):
            raise ParseError(f"negative token id in record {cid}", str(path), ln)
        if cid in out:
            raise ParseError(f"duplicate id {cid}", str(path), ln)
        out[cid] = tokens
    return out


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    """TREC qrels: ``<qid> 0 <docid> <grade>``."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, judged in qrels.items():
            for did, grade in judged.items():
                fh.write(f"{qid} 0 {did} {grade}\n")


def read_qrels(path: str | Path) -> Qrels:
    out: Qrels = {}
    for ln, line in enumerate(_lines(path), start=1):
        parts = line.split()
        if len(parts) != 4:
            raise ParseError("expected '<qid> 0 <docid> <grade>'", str(path), ln)
        qid, _iter, did, grade_s = parts
        try:
            grade = int(grade_s)
        except ValueError:
            raise ParseError(f"non-integer grade {grade_s!r}", str(path), ln)
        if grade < 0:
            raise ParseError(f"negative grade for ({qid}, {did})", str(path), ln)
        out.setdefault(qid, {})[did] = grade
    return out


def write_run(path: str | Path, run: RunList, tag: str = "lsrkit") -> None:
    """TREC run: ``<qid> Q0 <docid> <rank> <score> <tag>``."""
    validate_run(run)
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in run.items():
            for rank, (did, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {did} {rank} {SCORE_FMT.format(score)} {tag}\n")


def read_run(path: str | Path) -> RunList:
    out: RunList = {}
    for ln, line in enumerate(_lines(path), start=1):
        parts = line.split()
        if len(parts) != 6 or parts[1] != "Q0":
            raise ParseError("expected '<qid> Q0 <docid> <rank> <score> <tag>'", str(path), ln)
        qid, _q0, did, rank_s, score_s, _tag = parts
        try:
            rank = int(rank_s)
            score = float(score_s)
        except ValueError:
            raise ParseError("non-numeric rank or score", str(path), ln)
        ranked = out.setdefault(qid, [])
        if rank != len(ranked) + 1:
            raise ParseError(f"rank {rank} out of order for query {qid}", str(path), ln)
        ranked.append((did, score))
    try:
        validate_run(out)
    except ValueError as exc:
        raise ParseError(str(exc), str(path))
    return out


def write_triplets(path: str | Path, triplets: list[TripletRecord]) -> None:
    """Triplet TSV: ``<qid>\\t<pos>\\t<neg>[\\t<teacher_pos>\\t<teacher_neg>]``."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            if t.has_teacher:
                fh.write(
                    f"{t.query_id}\t{t.pos_doc_id}\t{t.neg_doc_id}\t"
                    f"{SCORE_FMT.format(t.teacher_pos)}\t{SCORE_FMT.format(t.teacher_neg)}\n"
                )
            else:
                fh.write(f"{t.query_id}\t{t.pos_doc_id}\t{t.neg_doc_id}\n")


def read_triplets(path: str | Path) -> list[TripletRecord]:
    out: list[TripletRecord] = []
    for ln, line in enumerate(_lines(path), start=1):
        parts = line.split("\t")
        if len(parts) not in (3, 5):
            raise ParseError("expected 3 or 5 tab-separated fields", str(path), ln)
        try:
            if len(parts) == 3:
                rec = TripletRecord(parts[0], parts[1], parts[2])
            else:
                rec = TripletRecord(
                    parts[0], parts[1], parts[2], float(parts[3]), float(parts[4])
                )
        except ValueError as exc:
            raise ParseError(str(exc), str(path), ln)
        out.append(rec)
    return out
