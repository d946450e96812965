"""Training orchestration.

One place wires everything: named training scenarios (contrastive baseline,
teacher distillation, self-mined and ensemble-mined distillation, with or
without contrastive-span pre-trained init), the seeded SGD loop with a
ramped sparsity regularizer, the two-step self-distillation pipeline and the
regularizer-grid sweep with multi-seed aggregation.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    Corpus,
    Qrels,
    TripletRecord,
    ValidationError,
    WarningCounter,
    rank_dense,
)
from .encoder import (
    EncoderGrads,
    EncoderParams,
    Pooling,
    encode_batch_cached,
    encode_batch_dense,
    encode_backward_cached,
    init_params,
    save_checkpoint,
)
from .evaluation import SweepCell, mrr_at_k, tradeoff_curve
from .formats import write_triplets
from .mining import MiningConfig, TeacherModel, mine_self, mining_manifest
from .objectives import BatchScores, RegWeights, combined_loss, info_nce

# scenario name -> (ranking loss, negative source, required init)
SCENARIOS: dict[str, tuple[str, str, str]] = {
    "SPLADE": ("info_nce", "bm25", "random"),
    "DistilMSE": ("margin_mse", "bm25", "random"),
    "SelfDistil": ("margin_mse", "self", "random"),
    "EnsembleDistil": ("margin_mse", "ensemble", "random"),
    "CoCondenser-SelfDistil": ("margin_mse", "self", "pretrained"),
    "CoCondenser-EnsembleDistil": ("margin_mse", "ensemble", "pretrained"),
}


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    reg: RegWeights = RegWeights(0.0, 0.0)
    pooling: Pooling = Pooling.MAX
    seed: int = 0
    steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 0.05
    init: str = "random"  # "random" | "pretrained"
    v_in: int = 2000
    v_out: int = 2000
    hidden: int = 16

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.name!r}")
        required_init = SCENARIOS[self.name][2]
        if self.init != required_init:
            raise ConfigError(
                f"scenario {self.name} requires init={required_init!r}, got {self.init!r}"
            )
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError("learning_rate must be finite and >= 0")
        if self.v_in < 1 or self.v_out < 2 or self.hidden < 1:
            raise ConfigError("invalid encoder dimensions")

    @property
    def loss_kind(self) -> str:
        return SCENARIOS[self.name][0]

    @property
    def negative_source(self) -> str:
        return SCENARIOS[self.name][1]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lambda_q": self.reg.lambda_q,
            "lambda_d": self.reg.lambda_d,
            "pooling": self.pooling.value,
            "seed": self.seed,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "init": self.init,
            "v_in": self.v_in,
            "v_out": self.v_out,
            "hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        kwargs = dict(data)
        reg = RegWeights(kwargs.pop("lambda_q", 0.0), kwargs.pop("lambda_d", 0.0))
        pooling = Pooling(kwargs.pop("pooling", "max"))
        return cls(reg=reg, pooling=pooling, **kwargs)


@dataclass
class TrainBundle:
    corpus: Corpus
    queries: Corpus
    triplets: list[TripletRecord]
    init_params: EncoderParams


TrainLog = list[tuple[int, float, float, float, float]]

_LOG_HEADER = "step,loss,rank_loss,flops_q,flops_d"


def write_training_log(path: str | Path, log: TrainLog) -> None:
    """CSV log; float repr keeps the loss decomposition exact on re-read."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_LOG_HEADER + "\n")
        for step, loss, rank, fq, fd in log:
            fh.write(f"{step},{loss!r},{rank!r},{fq!r},{fd!r}\n")


def ramp_factor(step_index: int, total_steps: int) -> float:
    """Quadratic ramp of the regularizer weight over the first third of
    training, then constant at 1. ``step_index`` is 0-based."""
    horizon = max(1, total_steps // 3)
    ratio = min(1.0, (step_index + 1) / horizon)
    return ratio * ratio


@dataclass(frozen=True)
class _EffectiveScenario:
    """Scenario view with the ramp applied to the regularizer weights."""

    loss_kind: str
    negative_source: str
    reg: RegWeights


def _apply_sgd(params: EncoderParams, grads: EncoderGrads, lr: float) -> None:
    params.e -= lr * grads.e
    params.a_q -= lr * grads.a_q
    params.a_k -= lr * grads.a_k
    params.p -= lr * grads.p
    params.b -= lr * grads.b


def train(scenario: ScenarioConfig, bundle: TrainBundle) -> tuple[EncoderParams, TrainLog]:
    """Seeded mini-batch SGD; returns final parameters and the per-step log.

    The logged total equals rank_loss + flops_q + flops_d exactly (the parts
    are stored lambda-weighted). Aborts with the offending step index if the
    loss ever goes non-finite.
    """
    if not bundle.triplets:
        raise ValidationError("no training triplets")
    if scenario.loss_kind == "margin_mse" and not all(
        r.has_teacher for r in bundle.triplets
    ):
        raise ConfigError(f"scenario {scenario.name} needs teacher scores on all triplets")
    dims = (bundle.init_params.v_in, bundle.init_params.v_out, bundle.init_params.hidden)
    if dims != (scenario.v_in, scenario.v_out, scenario.hidden):
        raise ConfigError(f"init params dims {dims} disagree with scenario config")
    for r in bundle.triplets:
        if r.query_id not in bundle.queries:
            raise ValidationError(f"triplet query {r.query_id} missing from queries")
        if r.pos_doc_id not in bundle.corpus or r.neg_doc_id not in bundle.corpus:
            raise ValidationError(f"triplet doc missing from corpus for query {r.query_id}")

    params = bundle.init_params.copy()
    rng = np.random.default_rng([scenario.seed, 1])
    n = len(bundle.triplets)
    log: TrainLog = []
    for step in range(scenario.steps):
        picks = rng.integers(0, n, size=scenario.batch_size)
        batch = [bundle.triplets[int(i)] for i in picks]
        q_toks = [bundle.queries[r.query_id] for r in batch]
        d_toks = [bundle.corpus[r.pos_doc_id] for r in batch] + [
            bundle.corpus[r.neg_doc_id] for r in batch
        ]
        reps_q, cache_q = encode_batch_cached(params, q_toks, scenario.pooling)
        reps_d, cache_d = encode_batch_cached(params, d_toks, scenario.pooling)
        factor = ramp_factor(step, scenario.steps)
        view = _EffectiveScenario(
            loss_kind=scenario.loss_kind,
            negative_source=scenario.negative_source,
            reg=RegWeights(scenario.reg.lambda_q * factor, scenario.reg.lambda_d * factor),
        )
        out = combined_loss(view, batch, reps_q, reps_d)
        if not math.isfinite(out.total):
            raise TrainingDivergedError(step + 1, f"non-finite loss {out.total}")
        if scenario.learning_rate != 0.0:
            grads = encode_backward_cached(params, cache_q, out.grad_q)
            grads.iadd(encode_backward_cached(params, cache_d, out.grad_d))
            _apply_sgd(params, grads, scenario.learning_rate)
        log.append((step + 1, out.total, out.rank_loss, out.flops_q, out.flops_d))
    return params, log


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 500
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    pooling: Pooling = Pooling.MAX

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("span pre-training needs batch_size >= 2 (in-batch negatives)")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError("learning_rate must be finite and >= 0")


def pretrain_contrastive_spans(
    corpus: Corpus,
    params_init: EncoderParams,
    config: PretrainConfig,
    warnings: WarningCounter | None = None,
) -> tuple[EncoderParams, TrainLog]:
    """Contrastive pre-training over document span pairs.

    Each document splits at a seeded random cut into two spans; a span's
    positive is its sibling, its negatives are the other batch documents'
    sibling spans. No sparsity regularization here, so the log's flops
    columns are 0. Documents shorter than 2 tokens are excluded and counted.
    """
    warnings = warnings if warnings is not None else WarningCounter()
    eligible: list[tuple[int, ...]] = []
    for doc_id, toks in corpus.items():
        if len(toks) >= 2:
            eligible.append(tuple(toks))
        else:
            warnings.bump("doc-too-short")
    if len(eligible) < config.batch_size:
        raise ConfigError(
            f"only {len(eligible)} splittable docs for batch_size {config.batch_size}"
        )
    params = params_init.copy()
    rng = np.random.default_rng([config.seed, 2])
    log: TrainLog = []
    for step in range(config.steps):
        picks = rng.choice(len(eligible), size=config.batch_size, replace=False)
        spans_a: list[tuple[int, ...]] = []
        spans_b: list[tuple[int, ...]] = []
        for i in picks:
            toks = eligible[int(i)]
            cut = int(rng.integers(1, len(toks)))
            spans_a.append(toks[:cut])
            spans_b.append(toks[cut:])
        reps_a, cache_a = encode_batch_cached(params, spans_a, config.pooling)
        reps_b, cache_b = encode_batch_cached(params, spans_b, config.pooling)
        scores = reps_a @ reps_b.T
        b = config.batch_size
        pos = tuple(float(scores[i, i]) for i in range(b))
        neg_cols = [[j for j in range(b) if j != i] for i in range(b)]
        negs = tuple(
            tuple(float(scores[i, j]) for j in cols) for i, cols in enumerate(neg_cols)
        )
        loss, g_pos, g_negs = info_nce(BatchScores(pos=pos, negs=negs))
        if not math.isfinite(loss):
            raise TrainingDivergedError(step + 1, f"non-finite loss {loss}")
        d_scores = np.zeros_like(scores)
        for i, cols in enumerate(neg_cols):
            d_scores[i, i] = g_pos[i]
            d_scores[i, cols] = g_negs[i]
        if config.learning_rate != 0.0:
            grads = encode_backward_cached(params, cache_a, d_scores @ reps_b)
            grads.iadd(encode_backward_cached(params, cache_b, d_scores.T @ reps_a))
            _apply_sgd(params, grads, config.learning_rate)
        log.append((step + 1, loss, loss, 0.0, 0.0))
    return params, log


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class TwoStepConfig:
    step1: ScenarioConfig
    step2: ScenarioConfig
    mining: MiningConfig
    enable_step2: bool = True

    def __post_init__(self):
        if self.step1.loss_kind != "margin_mse":
            raise ConfigError("two-step pipeline starts from a distillation scenario")
        if self.enable_step2 and self.step2.negative_source != "self":
            raise ConfigError("two-step step 2 must mine from the step-1 model itself")


@dataclass
class TwoStepResult:
    model: EncoderParams
    step1_model: EncoderParams
    log: TrainLog
    manifest: dict


def run_two_step_self_distil(
    cfg: TwoStepConfig,
    corpus: Corpus,
    queries: Corpus,
    qrels: Qrels,
    step1_triplets: list[TripletRecord],
    teacher: TeacherModel,
    workdir: str | Path,
    pretrained_init: EncoderParams | None = None,
) -> TwoStepResult:
    """Distillation, then re-mining with the step-1 model and retraining.

    Step 1 trains on the provided (BM25-mined) triplets; step 2 mines hard
    negatives with the step-1 model, teacher-scores them, and retrains from a
    fresh init under the step-2 scenario. The step-2 triplet manifest records
    the step-1 checkpoint hash. With enable_step2 off the result is exactly
    the step-1 model.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    def initial(scen: ScenarioConfig) -> EncoderParams:
        if scen.init == "pretrained":
            if pretrained_init is None:
                raise ConfigError(f"scenario {scen.name} needs a pretrained checkpoint")
            return pretrained_init.copy()
        return init_params(scen.v_in, scen.v_out, scen.hidden, scen.seed)

    model1, log1 = train(cfg.step1, TrainBundle(corpus, queries, step1_triplets, initial(cfg.step1)))
    step1_path = workdir / "step1_checkpoint.json"
    save_checkpoint(step1_path, model1, cfg.step1.pooling)
    step1_hash = _sha256(step1_path)

    manifest: dict = {
        "step1": {"scenario": cfg.step1.to_dict(), "checkpoint_sha256": step1_hash},
        "step2_enabled": cfg.enable_step2,
    }
    if not cfg.enable_step2:
        return TwoStepResult(model=model1, step1_model=model1, log=log1, manifest=manifest)

    triplets2 = mine_self(
        model1, corpus, queries, qrels, cfg.mining, teacher, cfg.step1.pooling
    )
    triplets_path = workdir / "step2_triplets.tsv"
    write_triplets(triplets_path, triplets2)
    mine_info = mining_manifest(cfg.mining, [f"self:{step1_hash[:16]}"])
    mine_info["step1_checkpoint_sha256"] = step1_hash
    with open(workdir / "step2_triplets.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(mine_info, fh, indent=2, sort_keys=True)

    model2, log2 = train(cfg.step2, TrainBundle(corpus, queries, triplets2, initial(cfg.step2)))
    save_checkpoint(workdir / "step2_checkpoint.json", model2, cfg.step2.pooling)
    manifest["step2"] = {
        "scenario": cfg.step2.to_dict(),
        "triplets": str(triplets_path),
        "mining": mine_info,
    }
    return TwoStepResult(model=model2, step1_model=model1, log=log2, manifest=manifest)


@dataclass(frozen=True)
class SweepSpec:
    """Regularizer grid and seed protocol; 5 points x 3 seeds by default."""

    lambda_grid: tuple[tuple[float, float], ...] = (
        (1e-4, 1e-4),
        (1e-3, 1e-3),
        (1e-2, 1e-2),
        (1e-1, 1e-1),
        (1.0, 1.0),
    )
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if not self.lambda_grid or not self.seeds:
            raise ConfigError("sweep needs at least one grid point and one seed")
        for lq, ld in self.lambda_grid:
            if lq < 0 or ld < 0:
                raise ConfigError("lambda values must be >= 0")

    def to_dict(self) -> dict:
        return {
            "lambda_grid": [list(p) for p in self.lambda_grid],
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        kwargs = {}
        if "lambda_grid" in data:
            kwargs["lambda_grid"] = tuple(tuple(p) for p in data["lambda_grid"])
        if "seeds" in data:
            kwargs["seeds"] = tuple(data["seeds"])
        return cls(**kwargs)


@dataclass
class SweepData:
    corpus: Corpus
    queries: Corpus
    triplets: list[TripletRecord]
    dev_queries: Corpus
    qrels: Qrels
    mrr_k: int = 10


@dataclass
class SweepResult:
    cells: list[SweepCell]
    failures: list[dict]
    models: dict[tuple[float, float, int], EncoderParams]

    @property
    def curve_csv(self) -> str:
        return tradeoff_curve(self.cells)


def evaluate_model(
    model: EncoderParams, pooling: Pooling, data: SweepData
) -> tuple[float, float]:
    """(MRR@k on dev, retrieval-cost metric) for one trained model.

    Scores dev queries against the dense document matrix directly; the
    ranking matches inverted-index retrieval (same candidates, ties by doc
    id) without paying per-posting accumulation on near-dense models. The
    cost metric is the same activation-frequency product ``estimate_flops``
    computes from an index.
    """
    doc_ids = np.array(list(data.corpus.keys()))
    doc_reps = encode_batch_dense(model, list(data.corpus.values()), pooling)
    dev_ids = list(data.dev_queries.keys())
    dev_reps = encode_batch_dense(
        model, [data.dev_queries[q] for q in dev_ids], pooling
    )
    scores = dev_reps @ doc_reps.T  # (Q, N), non-negative
    run = {
        qid: rank_dense(doc_ids, scores[i], data.mrr_k)
        for i, qid in enumerate(dev_ids)
    }
    mrr = mrr_at_k(run, data.qrels, k=data.mrr_k).mean
    q_frac = (dev_reps > 0.0).mean(axis=0)
    d_frac = (doc_reps > 0.0).mean(axis=0)
    flops = float(q_frac @ d_frac)
    return mrr, flops


def sweep(
    template: ScenarioConfig,
    spec: SweepSpec,
    data: SweepData,
    max_workers: int = 1,
    zero_shot_eval=None,
) -> SweepResult:
    """Train and evaluate the full (lambda grid x seeds) matrix.

    Cells run independently (thread pool, ``max_workers``); a failed cell is
    recorded with its error and leaves a gap row, never aborts the sweep.
    ``zero_shot_eval(model, pooling) -> float`` optionally fills each cell's
    out-of-domain column.
    """
    jobs = [
        (lq, ld, seed) for (lq, ld) in spec.lambda_grid for seed in spec.seeds
    ]

    def run_cell(job: tuple[float, float, int]):
        lq, ld, seed = job
        scen = replace(template, reg=RegWeights(lq, ld), seed=seed)
        init = init_params(scen.v_in, scen.v_out, scen.hidden, seed)
        model, _ = train(scen, TrainBundle(data.corpus, data.queries, data.triplets, init))
        mrr, flops = evaluate_model(model, scen.pooling, data)
        zs = zero_shot_eval(model, scen.pooling) if zero_shot_eval is not None else None
        return SweepCell(lq, ld, seed, flops=flops, mrr=mrr, zero_shot_ndcg=zs), model

    cells: list[SweepCell] = []
    failures: list[dict] = []
    models: dict[tuple[float, float, int], EncoderParams] = {}
    if max_workers <= 1:
        outcomes = [(job, _try(run_cell, job)) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(lambda j: _try(run_cell, j), jobs))
        outcomes = list(zip(jobs, results))
    for job, outcome in outcomes:
        lq, ld, seed = job
        if isinstance(outcome, Exception):
            failures.append(
                {"lambda_q": lq, "lambda_d": ld, "seed": seed, "error": str(outcome)}
            )
            cells.append(SweepCell(lq, ld, seed))
        else:
            cell, model = outcome
            cells.append(cell)
            models[job] = model
    return SweepResult(cells=cells, failures=failures, models=models)


def _try(fn, arg):
    try:
        return fn(arg)
    except Exception as exc:
        return exc
