"""Batch command-line entry points.

Every subcommand delegates to one library operation, reads/writes the text
and binary formats of this package, and drops a manifest JSON (command,
resolved config and its hash, seeds, input file hashes, versions) next to
its primary output so any artifact can be reproduced.

Exit codes: 0 success, 2 usage/config/schema error, 1 runtime failure.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import ConfigError, ParseError, ValidationError, WarningCounter, prune
from .datagen import (
    GeneratorSpec,
    generate,
    generate_shifted,
    load_ground_truth,
    save_ground_truth,
)
from .encoder import (
    Pooling,
    encode_batch_dense,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .evaluation import (
    SweepCell,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    tradeoff_curve,
    zero_shot_suite,
)
from .formats import (
    read_qrels,
    read_run,
    read_texts,
    read_triplets,
    write_qrels,
    write_run,
    write_texts,
    write_triplets,
)
from .index import build_from_dense, load_index, quantized, retrieve, save_index
from .lexical import Bm25Params, bm25_run, build_bm25, fuse_sum
from .mining import (
    MiningConfig,
    MiningSource,
    OracleTeacher,
    make_bm25_retriever,
    make_model_retriever,
    mine_bm25,
    mine_ensemble,
    mine_self,
    mining_manifest,
)
from .trainer import (
    PretrainConfig,
    ScenarioConfig,
    SweepData,
    SweepSpec,
    TrainBundle,
    TwoStepConfig,
    evaluate_model,
    pretrain_contrastive_spans,
    run_two_step_self_distil,
    sweep as run_sweep,
    train as run_train,
    write_training_log,
)


def _sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: str | Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(
    out_path: str | Path,
    command: str,
    config: dict,
    seeds: list[int],
    inputs: dict[str, str | Path],
) -> None:
    """Reproducibility record: no timestamps, so reruns are byte-identical."""
    payload = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "seeds": seeds,
        "input_hashes": {name: _sha256_file(p) for name, p in sorted(inputs.items())},
        "versions": {
            "lsrkit": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    _write_json(out_path, payload)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _override(config: dict, **flags) -> dict:
    """Config-file values, overridden by any flag the user actually passed."""
    out = dict(config)
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _cli_errors(fn):
    """Map schema/config problems to exit 2, runtime failures to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, ConfigError, ValidationError, TypeError) as exc:
            raise click.UsageError(str(exc))
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _resolve_pooling(flag: str | None, stored: Pooling | None) -> Pooling:
    if flag is not None:
        return Pooling(flag)
    if stored is not None:
        return stored
    raise ConfigError("checkpoint has no pooling metadata; pass --pooling")


def _teacher(gt_path: str, corpus, queries, sigma: float, seed: int) -> OracleTeacher:
    return OracleTeacher(load_ground_truth(gt_path), corpus, queries, sigma=sigma, seed=seed)


pooling_option = click.option(
    "--pooling", type=click.Choice(["max", "sum"]), default=None, help="Pooling mode."
)


@click.group()
@click.version_option(__version__)
def main():
    """Learned sparse retrieval toolkit: synthetic benchmarks, training,
    mining, indexing, retrieval and evaluation as batch pipelines."""


@main.command("datagen")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None, help="Override the spec seed.")
@click.option("--shifted/--no-shifted", default=True, help="Also emit shifted corpora.")
@click.option("--out-dir", type=click.Path(), required=True)
@_cli_errors
def cmd_datagen(config_path, seed, shifted, out_dir):
    """Generate the synthetic benchmark (and shifted corpora) into a directory."""
    cfg = _override(_load_config(config_path), seed=seed)
    spec = GeneratorSpec.from_dict(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench = generate(spec)
    write_texts(out / "corpus.tsv", bench.corpus)
    write_texts(out / "train_queries.tsv", bench.train_queries)
    write_texts(out / "dev_queries.tsv", bench.dev_queries)
    write_qrels(out / "qrels.tsv", bench.qrels)
    save_ground_truth(out / "groundtruth.json", bench.ground_truth)
    _write_json(out / "spec.json", spec.to_dict())
    if shifted:
        for sb in generate_shifted(spec):
            sub = out / sb.name
            sub.mkdir(exist_ok=True)
            write_texts(sub / "corpus.tsv", sb.corpus)
            write_texts(sub / "queries.tsv", sb.queries)
            write_qrels(sub / "qrels.tsv", sb.qrels)
            _write_json(
                sub / "meta.json",
                {"name": sb.name, "vocab_shift": sb.vocab_shift, "prior_shift": sb.prior_shift},
            )
    for key, n in sorted(bench.warnings.counts.items()):
        click.echo(f"warning: {key} x{n}", err=True)
    _manifest(out / "manifest.json", "datagen", spec.to_dict(), [spec.seed], {})
    click.echo(f"benchmark written to {out}")


@main.command("pretrain")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@_cli_errors
def cmd_pretrain(config_path, corpus_path, seed, steps, out_path, log_path):
    """Contrastive span pre-training; writes an init checkpoint."""
    raw = _override(_load_config(config_path), seed=seed, steps=steps)
    dims = {
        "v_in": int(raw.pop("v_in", 2000)),
        "v_out": int(raw.pop("v_out", 2000)),
        "hidden": int(raw.pop("hidden", 16)),
    }
    if "pooling" in raw:
        raw["pooling"] = Pooling(raw["pooling"])
    cfg = PretrainConfig(**raw)
    corpus = read_texts(corpus_path)
    init = init_params(dims["v_in"], dims["v_out"], dims["hidden"], cfg.seed)
    warnings = WarningCounter()
    params, log = pretrain_contrastive_spans(corpus, init, cfg, warnings)
    save_checkpoint(out_path, params, cfg.pooling)
    write_training_log(log_path or f"{out_path}.log.csv", log)
    if warnings.total():
        click.echo(f"warning: {warnings.total()} docs too short to split", err=True)
    config_dict = {
        **dims,
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "pooling": cfg.pooling.value,
    }
    _manifest(
        f"{out_path}.manifest.json",
        "pretrain",
        config_dict,
        [cfg.seed],
        {"corpus": corpus_path},
    )
    click.echo(f"pretrained checkpoint written to {out_path}")


@main.command("mine")
@click.option("--source", type=click.Choice(["bm25", "self", "ensemble"]), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@click.option("--qrels", "qrels_path", type=click.Path(exists=True), required=True)
@click.option("--groundtruth", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), default=None,
              help="Model checkpoint (required for self/ensemble mining).")
@pooling_option
@click.option("--top-k", type=int, default=50, show_default=True)
@click.option("--triplets-per-query", type=int, default=20, show_default=True)
@click.option("--negatives-per-query", type=int, default=1, show_default=True)
@click.option("--sigma", type=float, default=0.1, show_default=True, help="Teacher noise.")
@click.option("--teacher-seed", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_mine(source, corpus_path, queries_path, qrels_path, gt_path, ckpt_path, pooling,
             top_k, triplets_per_query, negatives_per_query, sigma, teacher_seed, seed, out_path):
    """Mine teacher-scored training triplets."""
    corpus = read_texts(corpus_path)
    queries = read_texts(queries_path)
    qrels = read_qrels(qrels_path)
    cfg = MiningConfig(
        source=MiningSource(source),
        top_k=top_k,
        negatives_per_query=negatives_per_query,
        triplets_per_query=triplets_per_query,
        seed=seed,
    )
    teacher = _teacher(gt_path, corpus, queries, sigma, teacher_seed)
    warnings = WarningCounter()
    inputs = {"corpus": corpus_path, "queries": queries_path, "qrels": qrels_path,
              "groundtruth": gt_path}
    if source == "bm25":
        triplets = mine_bm25(corpus, queries, qrels, cfg, teacher, warnings=warnings)
        retriever_ids = ["bm25"]
    else:
        if ckpt_path is None:
            raise ConfigError(f"--checkpoint is required for {source} mining")
        params, stored = load_checkpoint(ckpt_path)
        mode = _resolve_pooling(pooling, stored)
        inputs["checkpoint"] = ckpt_path
        if source == "self":
            triplets = mine_self(
                params, corpus, queries, qrels, cfg, teacher, mode, warnings=warnings
            )
            retriever_ids = [f"self:{_sha256_file(ckpt_path)[:16]}"]
        else:
            retrievers = [
                make_bm25_retriever(corpus, cfg.top_k),
                make_model_retriever(params, corpus, cfg.top_k, mode),
            ]
            triplets = mine_ensemble(
                retrievers, corpus, queries, qrels, cfg, teacher, warnings=warnings
            )
            retriever_ids = ["bm25", f"model:{_sha256_file(ckpt_path)[:16]}"]
    write_triplets(out_path, triplets)
    if warnings.total():
        click.echo(f"warning: {warnings.total()} queries skipped", err=True)
    config_dict = {
        **mining_manifest(cfg, retriever_ids),
        "sigma": sigma,
        "teacher_seed": teacher_seed,
    }
    _manifest(f"{out_path}.manifest.json", "mine", config_dict, [seed, teacher_seed], inputs)
    click.echo(f"{len(triplets)} triplets written to {out_path}")


def _scenario_from_flags(config_path, **flags) -> ScenarioConfig:
    cfg = _override(_load_config(config_path), **flags)
    if "name" not in cfg:
        raise ConfigError("scenario config needs a 'name'")
    return ScenarioConfig.from_dict(cfg)


@main.command("train")
@click.option("--scenario", "config_path", type=click.Path(exists=True), required=True,
              help="Scenario JSON config.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@click.option("--triplets", "triplets_path", type=click.Path(exists=True), required=True)
@click.option("--init-checkpoint", "init_path", type=click.Path(exists=True), default=None,
              help="Pretrained init (required for CoCondenser-* scenarios).")
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--lambda-q", type=float, default=None)
@click.option("--lambda-d", type=float, default=None)
@pooling_option
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@_cli_errors
def cmd_train(config_path, corpus_path, queries_path, triplets_path, init_path,
              seed, steps, batch_size, learning_rate, lambda_q, lambda_d, pooling,
              out_path, log_path):
    """Train one scenario on mined triplets; writes checkpoint and log."""
    scenario = _scenario_from_flags(
        config_path,
        seed=seed,
        steps=steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        lambda_q=lambda_q,
        lambda_d=lambda_d,
        pooling=pooling,
    )
    corpus = read_texts(corpus_path)
    queries = read_texts(queries_path)
    triplets = read_triplets(triplets_path)
    inputs = {"corpus": corpus_path, "queries": queries_path, "triplets": triplets_path}
    if scenario.init == "pretrained":
        if init_path is None:
            raise ConfigError(f"scenario {scenario.name} requires --init-checkpoint")
        init, _ = load_checkpoint(init_path)
        inputs["init_checkpoint"] = init_path
    else:
        init = init_params(scenario.v_in, scenario.v_out, scenario.hidden, scenario.seed)
    params, log = run_train(scenario, TrainBundle(corpus, queries, triplets, init))
    save_checkpoint(out_path, params, scenario.pooling)
    write_training_log(log_path or f"{out_path}.log.csv", log)
    _manifest(
        f"{out_path}.manifest.json", "train", scenario.to_dict(), [scenario.seed], inputs
    )
    click.echo(f"checkpoint written to {out_path}")


@main.command("two-step")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="JSON with step1/step2 scenario dicts and mining settings.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@click.option("--qrels", "qrels_path", type=click.Path(exists=True), required=True)
@click.option("--triplets", "triplets_path", type=click.Path(exists=True), required=True,
              help="Step-1 (BM25-mined) triplets.")
@click.option("--groundtruth", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--init-checkpoint", "init_path", type=click.Path(exists=True), default=None)
@click.option("--sigma", type=float, default=0.1, show_default=True)
@click.option("--teacher-seed", type=int, default=0, show_default=True)
@click.option("--workdir", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_two_step(config_path, corpus_path, queries_path, qrels_path, triplets_path,
                 gt_path, init_path, sigma, teacher_seed, workdir, out_path):
    """Distill, re-mine with the step-1 model, retrain; writes the final model."""
    raw = _load_config(config_path)
    for key in ("step1", "step2"):
        if key not in raw:
            raise ConfigError(f"two-step config needs a '{key}' scenario")
    mining_raw = dict(raw.get("mining", {}))
    mining_raw.setdefault("source", "self")
    mining_raw["source"] = MiningSource(mining_raw["source"])
    cfg = TwoStepConfig(
        step1=ScenarioConfig.from_dict(raw["step1"]),
        step2=ScenarioConfig.from_dict(raw["step2"]),
        mining=MiningConfig(**mining_raw),
        enable_step2=bool(raw.get("enable_step2", True)),
    )
    corpus = read_texts(corpus_path)
    queries = read_texts(queries_path)
    qrels = read_qrels(qrels_path)
    triplets = read_triplets(triplets_path)
    teacher = _teacher(gt_path, corpus, queries, sigma, teacher_seed)
    pretrained = None
    inputs = {"corpus": corpus_path, "queries": queries_path, "qrels": qrels_path,
              "triplets": triplets_path, "groundtruth": gt_path}
    if init_path is not None:
        pretrained, _ = load_checkpoint(init_path)
        inputs["init_checkpoint"] = init_path
    result = run_two_step_self_distil(
        cfg, corpus, queries, qrels, triplets, teacher, workdir, pretrained
    )
    save_checkpoint(out_path, result.model, cfg.step2.pooling if cfg.enable_step2 else cfg.step1.pooling)
    _write_json(f"{out_path}.pipeline.json", result.manifest)
    config_dict = {
        "step1": cfg.step1.to_dict(),
        "step2": cfg.step2.to_dict(),
        "mining": mining_manifest(cfg.mining, []),
        "enable_step2": cfg.enable_step2,
        "sigma": sigma,
        "teacher_seed": teacher_seed,
    }
    _manifest(
        f"{out_path}.manifest.json",
        "two-step",
        config_dict,
        [cfg.step1.seed, cfg.step2.seed, cfg.mining.seed, teacher_seed],
        inputs,
    )
    click.echo(f"final checkpoint written to {out_path}")


@main.command("sweep")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--sweep", "sweep_path", type=click.Path(exists=True), default=None,
              help="SweepSpec JSON (lambda_grid, seeds); defaults otherwise.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@click.option("--triplets", "triplets_path", type=click.Path(exists=True), required=True)
@click.option("--dev-queries", "dev_path", type=click.Path(exists=True), required=True)
@click.option("--qrels", "qrels_path", type=click.Path(exists=True), required=True)
@click.option("--max-workers", type=int, default=1, show_default=True,
              help="Concurrent sweep cells.")
@click.option("--save-models", is_flag=True, default=False)
@click.option("--out-dir", type=click.Path(), required=True)
@_cli_errors
def cmd_sweep(scenario_path, sweep_path, corpus_path, queries_path, triplets_path,
              dev_path, qrels_path, max_workers, save_models, out_dir):
    """Train the lambda grid x seeds matrix and record per-cell metrics."""
    template = _scenario_from_flags(scenario_path)
    spec = SweepSpec.from_dict(_load_config(sweep_path)) if sweep_path else SweepSpec()
    data = SweepData(
        corpus=read_texts(corpus_path),
        queries=read_texts(queries_path),
        triplets=read_triplets(triplets_path),
        dev_queries=read_texts(dev_path),
        qrels=read_qrels(qrels_path),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_sweep(template, spec, data, max_workers=max_workers)
    cells = [
        {
            "lambda_q": c.lambda_q,
            "lambda_d": c.lambda_d,
            "seed": c.seed,
            "flops": c.flops,
            "mrr": c.mrr,
            "zero_shot_ndcg": c.zero_shot_ndcg,
        }
        for c in result.cells
    ]
    _write_json(
        out / "sweep_results.json",
        {
            "template": template.to_dict(),
            "sweep": spec.to_dict(),
            "cells": cells,
            "failures": result.failures,
        },
    )
    if save_models:
        for (lq, ld, seed), model in sorted(result.models.items()):
            save_checkpoint(out / f"model_lq{lq}_ld{ld}_s{seed}.json", model, template.pooling)
    if result.failures:
        click.echo(f"warning: {len(result.failures)} cells failed", err=True)
    _manifest(
        out / "manifest.json",
        "sweep",
        {"template": template.to_dict(), "sweep": spec.to_dict()},
        list(spec.seeds),
        {"corpus": corpus_path, "queries": queries_path, "triplets": triplets_path,
         "dev_queries": dev_path, "qrels": qrels_path},
    )
    click.echo(f"sweep results written to {out / 'sweep_results.json'}")


@main.command("index")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@pooling_option
@click.option("--quantize", is_flag=True, default=False,
              help="8-bit weight quantization (lossy).")
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_index(ckpt_path, corpus_path, pooling, quantize, out_path):
    """Encode a corpus with a trained model and build the inverted index."""
    params, stored = load_checkpoint(ckpt_path)
    mode = _resolve_pooling(pooling, stored)
    corpus = read_texts(corpus_path)
    doc_ids = list(corpus.keys())
    idx = build_from_dense(doc_ids, encode_batch_dense(params, [corpus[d] for d in doc_ids], mode))
    if quantize:
        idx = quantized(idx)
    save_index(out_path, idx)
    _manifest(
        f"{out_path}.manifest.json",
        "index",
        {"pooling": mode.value, "quantize": quantize, "docs": idx.size, "nnz": idx.nnz},
        [],
        {"checkpoint": ckpt_path, "corpus": corpus_path},
    )
    click.echo(f"index over {idx.size} docs ({idx.nnz} postings) written to {out_path}")


@main.command("search")
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@pooling_option
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--tag", default="lsrkit", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_search(index_path, ckpt_path, queries_path, pooling, k, tag, out_path):
    """Retrieve top-k for every query; writes a standard run file."""
    params, stored = load_checkpoint(ckpt_path)
    mode = _resolve_pooling(pooling, stored)
    idx = load_index(index_path)
    queries = read_texts(queries_path)
    qids = list(queries.keys())
    reps = encode_batch_dense(params, [queries[q] for q in qids], mode)
    run = {}
    for i, qid in enumerate(qids):
        vec = prune(reps[i])
        run[qid] = retrieve(idx, vec, k) if vec.term_ids else []
    write_run(out_path, run, tag=tag)
    _manifest(
        f"{out_path}.manifest.json",
        "search",
        {"k": k, "pooling": mode.value, "tag": tag},
        [],
        {"index": index_path, "checkpoint": ckpt_path, "queries": queries_path},
    )
    click.echo(f"run written to {out_path}")


@main.command("bm25")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--k1", type=float, default=0.9, show_default=True)
@click.option("--b", type=float, default=0.4, show_default=True)
@click.option("--tag", default="bm25", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_bm25(corpus_path, queries_path, k, k1, b, tag, out_path):
    """BM25 baseline run over a token corpus."""
    corpus = read_texts(corpus_path)
    queries = read_texts(queries_path)
    params = Bm25Params(k1=k1, b=b)
    run = bm25_run(build_bm25(corpus), queries, params, k)
    write_run(out_path, run, tag=tag)
    _manifest(
        f"{out_path}.manifest.json",
        "bm25",
        {"k": k, "k1": k1, "b": b, "tag": tag},
        [],
        {"corpus": corpus_path, "queries": queries_path},
    )
    click.echo(f"run written to {out_path}")


@main.command("fuse")
@click.option("--run-a", "run_a_path", type=click.Path(exists=True), required=True)
@click.option("--run-b", "run_b_path", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--normalize", is_flag=True, default=False,
              help="Per-query min-max normalization before summing.")
@click.option("--tag", default="fuse-sum", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_fuse(run_a_path, run_b_path, k, normalize, tag, out_path):
    """Additive fusion of two run files."""
    warnings = WarningCounter()
    fused = fuse_sum(
        read_run(run_a_path), read_run(run_b_path), k, normalize=normalize, warnings=warnings
    )
    write_run(out_path, fused, tag=tag)
    if warnings.total():
        click.echo(f"warning: {warnings.total()} queries present in one run only", err=True)
    _manifest(
        f"{out_path}.manifest.json",
        "fuse",
        {"k": k, "normalize": normalize, "tag": tag},
        [],
        {"run_a": run_a_path, "run_b": run_b_path},
    )
    click.echo(f"fused run written to {out_path}")


@main.command("eval")
@click.option("--run", "run_path", type=click.Path(exists=True), required=True)
@click.option("--qrels", "qrels_path", type=click.Path(exists=True), required=True)
@click.option("--mrr-k", type=int, default=10, show_default=True)
@click.option("--ndcg-k", type=int, default=10, show_default=True)
@click.option("--recall-k", type=int, default=1000, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_eval(run_path, qrels_path, mrr_k, ndcg_k, recall_k, out_path):
    """Score a run file against qrels; writes a JSON metric report."""
    run = read_run(run_path)
    qrels = read_qrels(qrels_path)
    reports = {
        f"mrr@{mrr_k}": mrr_at_k(run, qrels, k=mrr_k).to_dict(),
        f"ndcg@{ndcg_k}": ndcg_at_k(run, qrels, k=ndcg_k).to_dict(),
        f"recall@{recall_k}": recall_at_k(run, qrels, k=recall_k).to_dict(),
    }
    _write_json(out_path, reports)
    for name, rep in reports.items():
        click.echo(f"{name}: {rep['mean']:.4f} ({rep['evaluated']} queries, "
                   f"{rep['excluded']} excluded)")
    _manifest(
        f"{out_path}.manifest.json",
        "eval",
        {"mrr_k": mrr_k, "ndcg_k": ndcg_k, "recall_k": recall_k},
        [],
        {"run": run_path, "qrels": qrels_path},
    )


@main.command("zero-shot")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--bench-dir", type=click.Path(exists=True), required=True,
              help="datagen output directory containing zs*/ subdirectories.")
@pooling_option
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_zero_shot(ckpt_path, bench_dir, pooling, k, out_path):
    """Evaluate one fixed model across all shifted corpora; per-dataset + mean."""
    params, stored = load_checkpoint(ckpt_path)
    mode = _resolve_pooling(pooling, stored)
    bench_root = Path(bench_dir)
    dirs = sorted(d for d in bench_root.iterdir() if d.is_dir() and d.name.startswith("zs"))
    if not dirs:
        raise ConfigError(f"no zs*/ corpora under {bench_dir}")
    benchmarks = []
    inputs: dict[str, str | Path] = {"checkpoint": ckpt_path}
    for d in dirs:
        corpus = read_texts(d / "corpus.tsv")
        queries = read_texts(d / "queries.tsv")
        qrels = read_qrels(d / "qrels.tsv")
        benchmarks.append((d.name, corpus, queries, qrels))
        inputs[f"{d.name}/corpus"] = d / "corpus.tsv"
        inputs[f"{d.name}/queries"] = d / "queries.tsv"
        inputs[f"{d.name}/qrels"] = d / "qrels.tsv"

    def producer(name, corpus, queries):
        dids = list(corpus.keys())
        idx = build_from_dense(dids, encode_batch_dense(params, [corpus[d] for d in dids], mode))
        qids = list(queries.keys())
        reps = encode_batch_dense(params, [queries[q] for q in qids], mode)
        run = {}
        for i, qid in enumerate(qids):
            vec = prune(reps[i])
            run[qid] = retrieve(idx, vec, max(k, 10)) if vec.term_ids else []
        return run

    result = zero_shot_suite(producer, benchmarks, k=k)
    _write_json(out_path, result.to_dict())
    for name, value in sorted(result.per_dataset.items()):
        click.echo(f"{name}: ndcg@{k} = {value:.4f}")
    click.echo(f"mean: {result.mean:.4f}")
    for name, err in result.failures.items():
        click.echo(f"failed: {name}: {err}", err=True)
    _manifest(
        f"{out_path}.manifest.json",
        "zero-shot",
        {"k": k, "pooling": mode.value, "datasets": [d.name for d in dirs]},
        [],
        inputs,
    )


@main.command("curve")
@click.option("--sweep-results", "results_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_cli_errors
def cmd_curve(results_path, out_path):
    """Aggregate sweep results into the tradeoff-curve CSV."""
    with open(results_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "cells" not in payload:
        raise ConfigError(f"{results_path} is not a sweep results file")
    cells = [
        SweepCell(
            lambda_q=c["lambda_q"],
            lambda_d=c["lambda_d"],
            seed=c["seed"],
            flops=c.get("flops"),
            mrr=c.get("mrr"),
            zero_shot_ndcg=c.get("zero_shot_ndcg"),
        )
        for c in payload["cells"]
    ]
    csv_text = tradeoff_curve(cells)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    _manifest(
        f"{out_path}.manifest.json", "curve", {}, [], {"sweep_results": results_path}
    )
    click.echo(f"curve written to {out_path}")


if __name__ == "__main__":
    main()
