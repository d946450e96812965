"""Rank-based retrieval metrics and report assembly.

MRR@10, nDCG@10 and R@1k with configurable cutoffs, a fixed-model zero-shot
suite over several corpora, and the CSV emitter for sparsity-effectiveness
tradeoff curves. Binary metrics treat grade >= 1 as relevant; nDCG uses the
exponential gain 2^grade - 1 with a log2(rank+1) discount.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Corpus, Qrels, RunList, ValidationError

GAP = ""  # CSV gap marker for metrics a failed sweep cell never produced


@dataclass
class MetricReport:
    metric: str
    k: int
    per_query: dict[str, float]
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        for qid, v in self.per_query.items():
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"metric value out of [0,1] for query {qid}: {v}")

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return sum(self.per_query.values()) / len(self.per_query)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "k": self.k,
            "mean": self.mean,
            "evaluated": len(self.per_query),
            "excluded": len(self.excluded),
            "per_query": dict(sorted(self.per_query.items())),
        }


def _relevant_ids(judgments: Mapping[str, int]) -> set[str]:
    return {d for d, g in judgments.items() if g >= 1}


def mrr_at_k(run: RunList, qrels: Qrels, k: int = 10) -> MetricReport:
    """Reciprocal rank of the first relevant doc within the top k, else 0.

    Queries without any relevant judgment are excluded and counted.
    """
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for qid in sorted(run):
        relevant = _relevant_ids(qrels.get(qid, {}))
        if not relevant:
            excluded.append(qid)
            continue
        value = 0.0
        for rank, (doc_id, _) in enumerate(run[qid][:k], start=1):
            if doc_id in relevant:
                value = 1.0 / rank
                break
        per_query[qid] = value
    return MetricReport("mrr", k, per_query, tuple(excluded))


def ndcg_at_k(run: RunList, qrels: Qrels, k: int = 10) -> MetricReport:
    """DCG with gain 2^grade - 1 and discount log2(rank+1), normalized by the
    ideal DCG over the query's judged grades; 0 when the ideal DCG is 0.

    Queries with no judgments at all are excluded and counted.
    """
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for qid in sorted(run):
        judgments = qrels.get(qid, {})
        if not judgments:
            excluded.append(qid)
            continue
        dcg = 0.0
        for rank, (doc_id, _) in enumerate(run[qid][:k], start=1):
            grade = judgments.get(doc_id, 0)
            if grade > 0:
                dcg += (2.0**grade - 1.0) / math.log2(rank + 1)
        ideal = 0.0
        for rank, grade in enumerate(sorted(judgments.values(), reverse=True)[:k], start=1):
            if grade > 0:
                ideal += (2.0**grade - 1.0) / math.log2(rank + 1)
        per_query[qid] = (dcg / ideal) if ideal > 0 else 0.0
    return MetricReport("ndcg", k, per_query, tuple(excluded))


def recall_at_k(run: RunList, qrels: Qrels, k: int = 1000) -> MetricReport:
    """Fraction of the query's relevant docs appearing in the top k.

    Queries without any relevant judgment are excluded and counted.
    """
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for qid in sorted(run):
        relevant = _relevant_ids(qrels.get(qid, {}))
        if not relevant:
            excluded.append(qid)
            continue
        top = {doc_id for doc_id, _ in run[qid][:k]}
        per_query[qid] = len(relevant & top) / len(relevant)
    return MetricReport("recall", k, per_query, tuple(excluded))


@dataclass
class ZeroShotResult:
    per_dataset: dict[str, float]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        if not self.per_dataset:
            return 0.0
        return sum(self.per_dataset.values()) / len(self.per_dataset)

    def to_dict(self) -> dict:
        return {
            "per_dataset": dict(sorted(self.per_dataset.items())),
            "mean": self.mean,
            "failures": dict(sorted(self.failures.items())),
        }


def zero_shot_suite(
    run_producer: Callable[[str, Corpus, Corpus], RunList],
    benchmarks: Sequence[tuple[str, Corpus, Corpus, Qrels]],
    k: int = 10,
) -> ZeroShotResult:
    """Evaluate one fixed model on every out-of-domain benchmark.

    ``run_producer(name, corpus, queries)`` must use the same model for every
    call (no per-corpus retraining). Reports per-dataset nDCG@k next to the
    mean, never the mean alone; a corpus whose evaluation raises is recorded
    as a failure and left out of the mean.
    """
    if not benchmarks:
        raise ValidationError("zero-shot suite needs at least one benchmark")
    per_dataset: dict[str, float] = {}
    failures: dict[str, str] = {}
    for name, corpus, queries, qrels in benchmarks:
        try:
            run = run_producer(name, corpus, queries)
            per_dataset[name] = ndcg_at_k(run, qrels, k=k).mean
        except Exception as exc:  # propagate per corpus, keep the suite going
            failures[name] = f"{type(exc).__name__}: {exc}"
    return ZeroShotResult(per_dataset=per_dataset, failures=failures)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard deviation (ddof=1; 0.0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("mean_std of empty sequence")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


@dataclass(frozen=True)
class SweepCell:
    """One sweep measurement: a (lambda_q, lambda_d, seed) training run.

    Metric fields are None when the cell failed before producing them.
    """

    lambda_q: float
    lambda_d: float
    seed: int
    flops: float | None = None
    mrr: float | None = None
    zero_shot_ndcg: float | None = None


_CURVE_HEADER = (
    "lambda_q,lambda_d,n_seeds,flops_mean,flops_std,"
    "mrr10_mean,mrr10_std,zs_ndcg10_mean,zs_ndcg10_std"
)


def tradeoff_curve(cells: Sequence[SweepCell]) -> str:
    """CSV with one row per (lambda_q, lambda_d) grid point, seed-aggregated.

    Columns a grid point has no measurements for hold gap markers, so failed
    cells still leave a visible row.
    """
    if not cells:
        raise ValidationError("no sweep cells")
    groups: dict[tuple[float, float], list[SweepCell]] = {}
    for cell in cells:
        groups.setdefault((cell.lambda_q, cell.lambda_d), []).append(cell)
    out = io.StringIO()
    out.write(_CURVE_HEADER + "\n")
    for (lq, ld), members in sorted(groups.items()):
        row = [repr(lq), repr(ld), str(len(members))]
        for attr in ("flops", "mrr", "zero_shot_ndcg"):
            values = [getattr(c, attr) for c in members if getattr(c, attr) is not None]
            if values:
                m, s = mean_std(values)
                row += ["{:.6f}".format(m), "{:.6f}".format(s)]
            else:
                row += [GAP, GAP]
        out.write(",".join(row) + "\n")
    return out.getvalue()
