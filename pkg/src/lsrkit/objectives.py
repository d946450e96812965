"""Training losses with analytic gradients.

Three building blocks: a contrastive softmax loss over one positive and a
list of negatives per query, a margin-regression loss against teacher
margins, and a sparsity regularizer on batch activations. ``combined_loss``
assembles them per scenario and returns gradients with respect to the pooled
query and document representations, ready to feed the encoder backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import ConfigError, TripletRecord, ValidationError


@dataclass(frozen=True)
class RegWeights:
    """Sparsity regularizer strengths for the query and document sides."""

    lambda_q: float
    lambda_d: float

    def __post_init__(self):
        for name, v in (("lambda_q", self.lambda_q), ("lambda_d", self.lambda_d)):
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class BatchScores:
    """Per-query ranking scores: one positive, negatives with the mined hard
    negative first and any in-batch negatives after it."""

    pos: tuple[float, ...]
    negs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.pos) != len(self.negs):
            raise ValidationError("pos and negs must have one entry per query")
        if not self.pos:
            raise ValidationError("empty score batch")
        for i, (p, ns) in enumerate(zip(self.pos, self.negs)):
            if not ns:
                raise ValidationError(f"query {i} has no negatives")
            if not all(math.isfinite(s) for s in (p, *ns)):
                raise ValidationError(f"non-finite score for query {i}")

    @property
    def size(self) -> int:
        return len(self.pos)


def info_nce(batch: BatchScores) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """Softmax cross-entropy of the positive against all negatives.

    Returns (loss, grad wrt each positive, grads wrt each negative list);
    gradients are softmax residuals scaled by 1/batch. Log-sum-exp keeps the
    computation stable for any score magnitudes.
    """
    n = batch.size
    total = 0.0
    grad_pos = np.empty(n)
    grad_negs: list[np.ndarray] = []
    for i in range(n):
        z = np.array((batch.pos[i], *batch.negs[i]))
        m = z.max()
        ez = np.exp(z - m)
        lse = m + math.log(ez.sum())
        total += lse - batch.pos[i]
        p = np.exp(z - lse)
        grad_pos[i] = (p[0] - 1.0) / n
        grad_negs.append(p[1:] / n)
    return total / n, grad_pos, grad_negs


def margin_mse(
    student_pos: Sequence[float],
    student_neg: Sequence[float],
    teacher_pos: Sequence[float],
    teacher_neg: Sequence[float],
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared error between student and teacher positive-negative
    margins. Returns (loss, grad wrt student_pos, grad wrt student_neg)."""
    sp = np.asarray(student_pos, dtype=np.float64)
    sn = np.asarray(student_neg, dtype=np.float64)
    tp = np.asarray(teacher_pos, dtype=np.float64)
    tn = np.asarray(teacher_neg, dtype=np.float64)
    if not (sp.shape == sn.shape == tp.shape == tn.shape) or sp.ndim != 1 or sp.size == 0:
        raise ValidationError("margin_mse expects four equal-length score lists")
    if not all(np.all(np.isfinite(a)) for a in (sp, sn, tp, tn)):
        raise ValidationError("non-finite score in margin_mse")
    diff = (sp - sn) - (tp - tn)
    n = sp.size
    loss = float(diff @ diff) / n
    g = 2.0 * diff / n
    return loss, g, -g


def flops_reg(reps: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over vocabulary terms of the squared mean batch activation.

    Pushing this down drives terms toward zero mean activation, which is what
    makes posting lists short. Gradient wrt every entry of column j is
    2 * mean_j / batch_size.
    """
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] == 0:
        raise ValidationError("flops_reg expects a (batch, vocab) array")
    if not np.all(np.isfinite(reps)):
        raise ValidationError("non-finite activation in flops_reg")
    if np.any(reps < 0):
        raise ValidationError("negative activation in flops_reg")
    n = reps.shape[0]
    mean = reps.mean(axis=0)
    loss = float(mean @ mean)
    grads = np.broadcast_to(2.0 * mean / n, reps.shape).copy()
    return loss, grads


class ScenarioLike(Protocol):
    """What combined_loss needs from a scenario: the trainer's ScenarioConfig
    satisfies this."""

    loss_kind: str  # "info_nce" | "margin_mse"
    negative_source: str
    reg: RegWeights


@dataclass
class CombinedLoss:
    total: float
    rank_loss: float
    flops_q: float  # lambda-weighted contribution, so total == rank + fq + fd
    flops_d: float
    grad_q: np.ndarray
    grad_d: np.ndarray
    provenance: dict


def combined_loss(
    scenario: ScenarioLike,
    batch: Sequence[TripletRecord],
    reps_q: np.ndarray,
    reps_d: np.ndarray,
) -> CombinedLoss:
    """Ranking loss plus weighted sparsity regularizers over one batch.

    ``reps_q`` holds one pooled query representation per triplet; ``reps_d``
    stacks the positives (rows 0..B-1) then the hard negatives (rows B..2B-1)
    in triplet order. In contrastive mode each query additionally treats the
    other queries' positives as in-batch negatives, listed after the hard
    negative. Returns lambda-weighted loss parts that sum exactly to the
    total, and gradients with respect to both representation stacks.
    """
    b = len(batch)
    if b == 0:
        raise ValidationError("empty batch")
    if reps_q.shape[0] != b or reps_d.shape[0] != 2 * b or reps_q.shape[1] != reps_d.shape[1]:
        raise ValidationError("representation stack shapes disagree with batch size")

    scores = reps_q @ reps_d.T  # (b, 2b)
    d_scores = np.zeros_like(scores)

    if scenario.loss_kind == "margin_mse":
        missing = [r for r in batch if not r.has_teacher]
        if missing:
            raise ConfigError("margin_mse scenario requires teacher scores on every triplet")
        sp = scores.diagonal()[:b]
        sn = scores[np.arange(b), b + np.arange(b)]
        tp = [r.teacher_pos for r in batch]
        tn = [r.teacher_neg for r in batch]
        rank_loss, g_pos, g_neg = margin_mse(sp, sn, tp, tn)
        d_scores[np.arange(b), np.arange(b)] = g_pos
        d_scores[np.arange(b), b + np.arange(b)] = g_neg
    elif scenario.loss_kind == "info_nce":
        pos = tuple(float(scores[i, i]) for i in range(b))
        neg_cols = [
            (b + i, *[j for j in range(b) if j != i]) for i in range(b)
        ]
        negs = tuple(
            tuple(float(scores[i, c]) for c in cols) for i, cols in enumerate(neg_cols)
        )
        rank_loss, g_pos, g_negs = info_nce(BatchScores(pos=pos, negs=negs))
        for i, cols in enumerate(neg_cols):
            d_scores[i, i] += g_pos[i]
            for c, g in zip(cols, g_negs[i]):
                d_scores[i, c] += g
    else:
        raise ConfigError(f"unknown loss kind: {scenario.loss_kind!r}")

    grad_q = d_scores @ reps_d
    grad_d = d_scores.T @ reps_q

    fq_raw, fq_grad = flops_reg(reps_q)
    fd_raw, fd_grad = flops_reg(reps_d)
    flops_q = scenario.reg.lambda_q * fq_raw
    flops_d = scenario.reg.lambda_d * fd_raw
    if scenario.reg.lambda_q != 0.0:
        grad_q += scenario.reg.lambda_q * fq_grad
    if scenario.reg.lambda_d != 0.0:
        grad_d += scenario.reg.lambda_d * fd_grad

    return CombinedLoss(
        total=rank_loss + flops_q + flops_d,
        rank_loss=rank_loss,
        flops_q=flops_q,
        flops_d=flops_d,
        grad_q=grad_q,
        grad_d=grad_d,
        provenance={
            "loss": scenario.loss_kind,
            "negative_source": scenario.negative_source,
            "in_batch_negatives": scenario.loss_kind == "info_nce",
        },
    )
