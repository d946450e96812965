"""Training loop, pre-training, two-step pipeline, and sweep mechanics.

Everything here runs on a tiny synthetic benchmark (80 docs, vocab 120) so
the whole module stays in the couple-of-seconds range.
"""

import hashlib
import json
import math

import numpy as np
import pytest

from lsrkit.core import ConfigError, SparseVec, ValidationError
from lsrkit.datagen import GeneratorSpec, generate
from lsrkit.encoder import EncoderParams, Pooling, encode, encode_batch_dense, init_params
from lsrkit.evaluation import mrr_at_k
from lsrkit.index import build_from_dense, estimate_flops, retrieve
from lsrkit.mining import MiningConfig, MiningSource, OracleTeacher, mine_bm25
from lsrkit.objectives import RegWeights
from lsrkit.trainer import (
    PretrainConfig,
    ScenarioConfig,
    SweepData,
    SweepSpec,
    TrainBundle,
    TrainingDivergedError,
    TwoStepConfig,
    evaluate_model,
    pretrain_contrastive_spans,
    ramp_factor,
    run_two_step_self_distil,
    sweep,
    train,
    write_training_log,
)

SPEC = GeneratorSpec(
    v_in=120,
    v_out=120,
    topics=4,
    docs=80,
    train_queries=25,
    dev_queries=8,
    doc_len=(8, 20),
    query_len=(3, 5),
    shift_docs=10,
    shift_queries=2,
    seed=3,
)
DIMS = dict(v_in=SPEC.v_in, v_out=SPEC.v_out, hidden=6)


@pytest.fixture(scope="module")
def bench():
    return generate(SPEC)


@pytest.fixture(scope="module")
def teacher(bench):
    return OracleTeacher(bench.ground_truth, bench.corpus, bench.train_queries, sigma=0.0, seed=0)


@pytest.fixture(scope="module")
def triplets(bench, teacher):
    cfg = MiningConfig(MiningSource.BM25, top_k=20, triplets_per_query=8, seed=0)
    return mine_bm25(bench.corpus, bench.train_queries, bench.qrels, cfg, teacher)


def scenario(name="DistilMSE", **kw):
    base = dict(name=name, seed=0, steps=40, batch_size=8, learning_rate=0.5, **DIMS)
    base.update(kw)
    return ScenarioConfig(**base)


def bundle_for(bench, triplets, scen):
    init = init_params(scen.v_in, scen.v_out, scen.hidden, seed=scen.seed)
    return TrainBundle(bench.corpus, bench.train_queries, triplets, init)


def test_scenario_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(name="NotAScenario")
    with pytest.raises(ConfigError):
        ScenarioConfig(name="SPLADE", init="pretrained")
    with pytest.raises(ConfigError):
        ScenarioConfig(name="CoCondenser-SelfDistil", init="random")
    with pytest.raises(ConfigError):
        ScenarioConfig(name="SPLADE", steps=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(name="SPLADE", learning_rate=-1.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(name="SPLADE", v_out=1)


def test_scenario_properties_and_round_trip():
    cfg = scenario("SPLADE", reg=RegWeights(0.01, 0.02))
    assert cfg.loss_kind == "info_nce" and cfg.negative_source == "bm25"
    again = ScenarioConfig.from_dict(cfg.to_dict())
    assert again == cfg
    cc = ScenarioConfig(name="CoCondenser-EnsembleDistil", init="pretrained")
    assert cc.loss_kind == "margin_mse" and cc.negative_source == "ensemble"


def test_ramp_factor_shape():
    # horizon = 100 for 300 steps: quadratic up, then flat 1
    assert ramp_factor(0, 300) == pytest.approx(1e-4)
    assert ramp_factor(49, 300) == pytest.approx(0.25)
    assert ramp_factor(99, 300) == 1.0
    assert ramp_factor(200, 300) == 1.0
    assert ramp_factor(0, 1) == 1.0
    values = [ramp_factor(i, 300) for i in range(300)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_write_training_log_round_trip(tmp_path):
    log = [(1, 0.1 + 0.2, 0.3, 1e-17, 0.0), (2, float(np.pi), 1.0, 0.5, 0.25)]
    path = tmp_path / "log.csv"
    write_training_log(path, log)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "step,loss,rank_loss,flops_q,flops_d"
    for row, want in zip(lines[1:], log):
        parts = row.split(",")
        assert int(parts[0]) == want[0]
        assert [float(p) for p in parts[1:]] == list(want[1:])  # repr round-trip


def test_train_zero_lr_keeps_params(bench, triplets):
    scen = scenario(learning_rate=0.0, steps=5)
    bundle = bundle_for(bench, triplets, scen)
    before = bundle.init_params.copy()
    params, log = train(scen, bundle)
    for name in ("e", "a_q", "a_k", "p", "b"):
        assert np.array_equal(getattr(params, name), getattr(before, name))
    assert len(log) == 5


def test_train_is_deterministic(bench, triplets):
    scen = scenario(steps=15)
    p1, log1 = train(scen, bundle_for(bench, triplets, scen))
    p2, log2 = train(scen, bundle_for(bench, triplets, scen))
    assert log1 == log2
    for name in ("e", "a_q", "a_k", "p", "b"):
        assert np.array_equal(getattr(p1, name), getattr(p2, name))


def test_train_seed_changes_trajectory(bench, triplets):
    _, log0 = train(scenario(steps=10), bundle_for(bench, triplets, scenario(steps=10)))
    scen1 = scenario(steps=10, seed=1)
    _, log1 = train(scen1, bundle_for(bench, triplets, scen1))
    assert log0 != log1


def test_train_log_decomposition_exact(bench, triplets):
    scen = scenario(steps=10, reg=RegWeights(0.05, 0.1))
    _, log = train(scen, bundle_for(bench, triplets, scen))
    for step, total, rank, fq, fd in log:
        assert total == rank + fq + fd
        assert fq >= 0.0 and fd >= 0.0
    # the ramp keeps early regularizer weight far below late weight
    assert log[0][3] < log[-1][3] or log[0][3] == 0.0


def test_train_reduces_loss(bench, triplets):
    scen = scenario(steps=120, learning_rate=1.0)
    _, log = train(scen, bundle_for(bench, triplets, scen))
    first = np.mean([row[1] for row in log[:15]])
    last = np.mean([row[1] for row in log[-15:]])
    assert last < first * 0.7


def test_train_validation(bench, triplets):
    scen = scenario()
    with pytest.raises(ValidationError):
        train(scen, TrainBundle(bench.corpus, bench.train_queries, [],
                                init_params(**DIMS, seed=0)))
    stripped = [type(t)(t.query_id, t.pos_doc_id, t.neg_doc_id) for t in triplets[:4]]
    with pytest.raises(ConfigError):
        train(scen, TrainBundle(bench.corpus, bench.train_queries, stripped,
                                init_params(**DIMS, seed=0)))
    with pytest.raises(ConfigError):
        train(scen, TrainBundle(bench.corpus, bench.train_queries, triplets,
                                init_params(60, 60, 6, seed=0)))
    orphan = [type(triplets[0])("no-such-query", triplets[0].pos_doc_id,
                                triplets[0].neg_doc_id, 1.0, 0.0)]
    with pytest.raises(ValidationError):
        train(scen, TrainBundle(bench.corpus, bench.train_queries, orphan,
                                init_params(**DIMS, seed=0)))


def test_training_diverged_error_carries_step():
    err = TrainingDivergedError(7, "non-finite loss inf")
    assert err.step == 7 and "step 7" in str(err)


def test_evaluate_model_matches_index_retrieval(bench, triplets):
    scen = scenario(steps=30)
    model, _ = train(scen, bundle_for(bench, triplets, scen))
    data = SweepData(bench.corpus, bench.train_queries, triplets,
                     bench.dev_queries, bench.qrels)
    mrr, flops = evaluate_model(model, scen.pooling, data)

    # independent path: inverted index over pruned encodings, exact retrieval
    doc_ids = list(bench.corpus)
    doc_reps = encode_batch_dense(model, list(bench.corpus.values()), scen.pooling)
    index = build_from_dense(doc_ids, doc_reps)
    run = {}
    for qid, toks in bench.dev_queries.items():
        run[qid] = retrieve(index, encode(model, toks, scen.pooling), 10)
    assert mrr == mrr_at_k(run, bench.qrels, k=10).mean

    q_vecs = [encode(model, t, scen.pooling) for t in bench.dev_queries.values()]
    assert abs(flops - estimate_flops(index, q_vecs)) < 1e-12


def test_pretrain_improves_and_is_deterministic(bench):
    cfg = PretrainConfig(steps=30, batch_size=8, learning_rate=0.5, seed=0)
    init = init_params(**DIMS, seed=0)
    p1, log1 = pretrain_contrastive_spans(bench.corpus, init, cfg)
    p2, log2 = pretrain_contrastive_spans(bench.corpus, init, cfg)
    assert log1 == log2
    for name in ("e", "a_q", "a_k", "p", "b"):
        assert np.array_equal(getattr(p1, name), getattr(p2, name))
    assert all(row[3] == 0.0 and row[4] == 0.0 for row in log1)
    first = np.mean([row[1] for row in log1[:5]])
    last = np.mean([row[1] for row in log1[-5:]])
    assert last < first


def test_pretrain_counts_short_docs(bench):
    from lsrkit.core import WarningCounter

    corpus = dict(bench.corpus)
    corpus["stub1"] = (5,)
    corpus["stub2"] = (9,)
    warnings = WarningCounter()
    cfg = PretrainConfig(steps=2, batch_size=4, learning_rate=0.1, seed=0)
    pretrain_contrastive_spans(corpus, init_params(**DIMS, seed=0), cfg, warnings)
    assert warnings.counts["doc-too-short"] == 2


def test_pretrain_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        PretrainConfig(steps=0)
    with pytest.raises(ConfigError):
        pretrain_contrastive_spans({"d": (1, 2)}, init_params(**DIMS, seed=0),
                                   PretrainConfig(batch_size=8))


def test_two_step_config_validation():
    distil = scenario("DistilMSE")
    selfd = scenario("SelfDistil")
    mining = MiningConfig(MiningSource.SELF, top_k=10, seed=0)
    TwoStepConfig(step1=distil, step2=selfd, mining=mining)
    with pytest.raises(ConfigError):
        TwoStepConfig(step1=scenario("SPLADE"), step2=selfd, mining=mining)
    with pytest.raises(ConfigError):
        TwoStepConfig(step1=distil, step2=distil, mining=mining)
    # a disabled step 2 is never validated against the self-mining rule
    TwoStepConfig(step1=distil, step2=distil, mining=mining, enable_step2=False)


def test_two_step_pipeline_artifacts(tmp_path, bench, teacher, triplets):
    cfg = TwoStepConfig(
        step1=scenario("DistilMSE", steps=25),
        step2=scenario("SelfDistil", steps=25),
        mining=MiningConfig(MiningSource.SELF, top_k=10, triplets_per_query=4, seed=0),
    )
    out = run_two_step_self_distil(cfg, bench.corpus, bench.train_queries,
                                   bench.qrels, triplets, teacher, tmp_path)
    for name in ("step1_checkpoint.json", "step2_triplets.tsv",
                 "step2_triplets.manifest.json", "step2_checkpoint.json"):
        assert (tmp_path / name).exists(), name
    want_hash = hashlib.sha256((tmp_path / "step1_checkpoint.json").read_bytes()).hexdigest()
    assert out.manifest["step1"]["checkpoint_sha256"] == want_hash
    mine_info = json.loads((tmp_path / "step2_triplets.manifest.json").read_text())
    assert mine_info["step1_checkpoint_sha256"] == want_hash
    assert mine_info["source"] == "self"
    # step-2 model differs from step 1 (fresh init, different triplets)
    assert not np.array_equal(out.model.e, out.step1_model.e)


def test_two_step_disabled_returns_step1(tmp_path, bench, teacher, triplets):
    cfg = TwoStepConfig(
        step1=scenario("DistilMSE", steps=20),
        step2=scenario("SelfDistil", steps=20),
        mining=MiningConfig(MiningSource.SELF, top_k=10, seed=0),
        enable_step2=False,
    )
    out = run_two_step_self_distil(cfg, bench.corpus, bench.train_queries,
                                   bench.qrels, triplets, teacher, tmp_path)
    scen1 = scenario("DistilMSE", steps=20)
    direct, _ = train(scen1, bundle_for(bench, triplets, scen1))
    for name in ("e", "a_q", "a_k", "p", "b"):
        assert np.array_equal(getattr(out.model, name), getattr(direct, name))
    assert out.manifest["step2_enabled"] is False
    assert not (tmp_path / "step2_checkpoint.json").exists()


def test_two_step_pretrained_init_required(tmp_path, bench, teacher, triplets):
    cfg = TwoStepConfig(
        step1=ScenarioConfig(name="CoCondenser-SelfDistil", init="pretrained",
                             steps=5, batch_size=8, learning_rate=0.5, **DIMS),
        step2=scenario("SelfDistil", steps=5),
        mining=MiningConfig(MiningSource.SELF, top_k=10, seed=0),
        enable_step2=False,
    )
    with pytest.raises(ConfigError):
        run_two_step_self_distil(cfg, bench.corpus, bench.train_queries,
                                 bench.qrels, triplets, teacher, tmp_path)


def test_sweep_grid_and_failure_isolation(bench, triplets):
    data = SweepData(bench.corpus, bench.train_queries, triplets,
                     bench.dev_queries, bench.qrels)
    spec = SweepSpec(lambda_grid=((0.0, 0.0), (0.01, 0.01)), seeds=(0, 1))
    calls = {"n": 0}

    def flaky_zero_shot(model, pooling):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("synthetic corpus exploded")
        return 0.5

    result = sweep(scenario(steps=10), spec, data, zero_shot_eval=flaky_zero_shot)
    assert len(result.cells) == 4
    assert len(result.failures) == 1
    failed = result.failures[0]
    assert (failed["lambda_q"], failed["seed"]) == (0.0, 0)
    assert "exploded" in failed["error"]
    # the failed cell leaves a gap row; the other grid cells carry metrics
    ok_cells = [c for c in result.cells if c.mrr is not None]
    assert len(ok_cells) == 3
    assert len(result.models) == 3
    csv = result.curve_csv
    assert csv.count("\n") == 3  # header + 2 grid rows


def test_sweep_threaded_matches_sequential(bench, triplets):
    data = SweepData(bench.corpus, bench.train_queries, triplets,
                     bench.dev_queries, bench.qrels)
    spec = SweepSpec(lambda_grid=((0.0, 0.0), (0.05, 0.05)), seeds=(0,))
    seq = sweep(scenario(steps=8), spec, data, max_workers=1)
    par = sweep(scenario(steps=8), spec, data, max_workers=2)
    assert seq.cells == par.cells


def test_sweep_spec_validation_and_round_trip():
    with pytest.raises(ConfigError):
        SweepSpec(lambda_grid=())
    with pytest.raises(ConfigError):
        SweepSpec(lambda_grid=((-0.1, 0.0),))
    spec = SweepSpec(lambda_grid=((0.1, 0.2),), seeds=(3, 4))
    assert SweepSpec.from_dict(spec.to_dict()) == spec
