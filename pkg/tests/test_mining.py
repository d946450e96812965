"""Hard-negative mining and oracle teacher behavior."""

import numpy as np
import pytest

from lsrkit.core import ConfigError, ValidationError, WarningCounter
from lsrkit.datagen import GeneratorSpec, generate
from lsrkit.encoder import Pooling, init_params
from lsrkit.mining import (
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

SPEC = GeneratorSpec(
    v_in=120,
    v_out=120,
    topics=4,
    docs=80,
    train_queries=25,
    dev_queries=5,
    doc_len=(8, 20),
    query_len=(3, 5),
    shift_docs=10,
    shift_queries=2,
    seed=3,
)


@pytest.fixture(scope="module")
def bench():
    return generate(SPEC)


@pytest.fixture(scope="module")
def teacher(bench):
    return OracleTeacher(bench.ground_truth, bench.corpus, bench.train_queries, sigma=0.0, seed=0)


def test_mining_never_emits_judged_negatives(bench, teacher):
    cfg = MiningConfig(MiningSource.BM25, triplets_per_query=5, seed=0)
    for rec in mine_bm25(bench.corpus, bench.train_queries, bench.qrels, cfg, teacher):
        judged = {d for d, g in bench.qrels[rec.query_id].items() if g >= 1}
        assert rec.pos_doc_id in judged
        assert rec.neg_doc_id not in judged
        assert rec.has_teacher


def test_mining_deterministic_and_query_order_independent(bench, teacher):
    cfg = MiningConfig(MiningSource.BM25, triplets_per_query=3, seed=0)
    a = mine_bm25(bench.corpus, bench.train_queries, bench.qrels, cfg, teacher)
    b = mine_bm25(bench.corpus, bench.train_queries, bench.qrels, cfg, teacher)
    assert a == b
    # reversed iteration order of the query dict must not change the output
    reversed_queries = dict(reversed(list(bench.train_queries.items())))
    c = mine_bm25(bench.corpus, reversed_queries, bench.qrels, cfg, teacher)
    assert a == c


def test_mining_seed_changes_sampling(bench, teacher):
    base = MiningConfig(MiningSource.BM25, triplets_per_query=5, seed=0)
    other = MiningConfig(MiningSource.BM25, triplets_per_query=5, seed=1)
    a = mine_bm25(bench.corpus, bench.train_queries, bench.qrels, base, teacher)
    b = mine_bm25(bench.corpus, bench.train_queries, bench.qrels, other, teacher)
    assert a != b


def test_mining_counts_and_negative_fanout(bench, teacher):
    cfg = MiningConfig(MiningSource.BM25, triplets_per_query=4, negatives_per_query=3, seed=0)
    recs = mine_bm25(bench.corpus, bench.train_queries, bench.qrels, cfg, teacher)
    per_query = {}
    for r in recs:
        per_query.setdefault(r.query_id, []).append(r)
    for qid, rows in per_query.items():
        assert len(rows) == 4 * 3
        # one positive scored per triplet, shared across its negative fanout
        for i in range(0, 12, 3):
            chunk = rows[i : i + 3]
            assert len({(r.pos_doc_id, r.teacher_pos) for r in chunk}) == 1


def test_mining_warning_counters(bench, teacher):
    warnings = WarningCounter()
    qrels = dict(bench.qrels)
    some_qid = next(iter(bench.train_queries))
    qrels[some_qid] = {}  # no relevant judgments left
    cfg = MiningConfig(MiningSource.BM25, triplets_per_query=2, seed=0)
    recs = mine_bm25(bench.corpus, bench.train_queries, qrels, cfg, teacher, warnings=warnings)
    assert warnings.counts["query-no-relevant"] == 1
    assert all(r.query_id != some_qid for r in recs)


def test_empty_pool_warning(teacher, bench):
    # a query whose entire BM25 pool is judged relevant yields no triplets
    corpus = {"a": (1, 2), "b": (3, 4)}
    queries = {"q": (1, 2)}
    qrels = {"q": {"a": 1}}
    warnings = WarningCounter()
    recs = mine_bm25(corpus, queries, qrels, MiningConfig(MiningSource.BM25, seed=0),
                     teacher, warnings=warnings)
    assert recs == [] and warnings.counts["query-empty-pool"] == 1


def test_oracle_teacher_sigma_zero_is_pure_cosine(bench):
    gt = bench.ground_truth
    t = OracleTeacher(gt, bench.corpus, bench.train_queries, sigma=0.0, seed=0)
    qid = next(iter(bench.train_queries))
    doc_id = gt.query_source[qid]
    mq = gt.query_mixture(qid)
    md = gt.doc_mixture(doc_id)
    want = float(mq @ md) / float(np.linalg.norm(mq) * np.linalg.norm(md))
    got = t.score(bench.train_queries[qid], bench.corpus[doc_id])
    assert got == want


def test_oracle_teacher_noise_is_per_pair_deterministic(bench):
    t = OracleTeacher(bench.ground_truth, bench.corpus, bench.train_queries, sigma=0.3, seed=5)
    qid = next(iter(bench.train_queries))
    d1, d2 = list(bench.corpus)[:2]
    s1 = t.score(bench.train_queries[qid], bench.corpus[d1])
    s2 = t.score(bench.train_queries[qid], bench.corpus[d2])
    # same pair, any call order: identical; different pair: different noise
    assert t.score(bench.train_queries[qid], bench.corpus[d1]) == s1
    assert s1 != s2
    other_seed = OracleTeacher(bench.ground_truth, bench.corpus, bench.train_queries, sigma=0.3, seed=6)
    assert other_seed.score(bench.train_queries[qid], bench.corpus[d1]) != s1


def test_oracle_teacher_unseen_tokens_use_posterior(bench):
    gt = bench.ground_truth
    t = OracleTeacher(gt, bench.corpus, bench.train_queries, sigma=0.0, seed=0)
    # a fabricated sequence heavy in one topic's top terms should resolve to
    # a mixture dominated by that topic
    topic = 2
    top_terms = np.argsort(-gt.topics[topic])[:5]
    mix = t.mixture_of(tuple(int(x) for x in np.repeat(top_terms, 3)))
    assert mix.argmax() == topic
    assert abs(mix.sum() - 1.0) < 1e-9


def test_oracle_teacher_validation(bench):
    with pytest.raises(ValidationError):
        OracleTeacher(bench.ground_truth, bench.corpus, bench.train_queries, sigma=-1.0)


def test_mine_self_uses_model_pool(bench, teacher):
    model = init_params(SPEC.v_in, SPEC.v_out, hidden=8, seed=0)
    cfg = MiningConfig(MiningSource.SELF, top_k=10, triplets_per_query=2, seed=0)
    recs = mine_self(model, bench.corpus, bench.train_queries, bench.qrels, cfg,
                     teacher, Pooling.MAX)
    retr = make_model_retriever(model, bench.corpus, 10, Pooling.MAX)
    for rec in recs[:20]:
        pool = {d for d, _ in retr(bench.train_queries[rec.query_id])}
        assert rec.neg_doc_id in pool


def test_model_retriever_ranks_by_dot_product(bench):
    model = init_params(SPEC.v_in, SPEC.v_out, hidden=8, seed=1)
    retr = make_model_retriever(model, bench.corpus, 5, Pooling.MAX)
    qid = next(iter(bench.train_queries))
    got = retr(bench.train_queries[qid])
    assert len(got) <= 5
    scores = [s for _, s in got]
    assert scores == sorted(scores, reverse=True)
    assert all(s > 0 for s in scores)


def test_mine_ensemble_pools_union(bench, teacher):
    model = init_params(SPEC.v_in, SPEC.v_out, hidden=8, seed=0)
    r1 = make_bm25_retriever(bench.corpus, 10)
    r2 = make_model_retriever(model, bench.corpus, 10, Pooling.MAX)
    cfg = MiningConfig(MiningSource.ENSEMBLE, top_k=10, triplets_per_query=3, seed=0)
    recs = mine_ensemble([r1, r2], bench.corpus, bench.train_queries, bench.qrels,
                         cfg, teacher)
    for rec in recs[:20]:
        q = bench.train_queries[rec.query_id]
        pool = {d for d, _ in r1(q)[:10]} | {d for d, _ in r2(q)[:10]}
        judged = {d for d, g in bench.qrels[rec.query_id].items() if g >= 1}
        assert rec.neg_doc_id in pool - judged


def test_mine_ensemble_needs_two_retrievers(bench, teacher):
    with pytest.raises(ConfigError):
        mine_ensemble([make_bm25_retriever(bench.corpus, 5)], bench.corpus,
                      bench.train_queries, bench.qrels,
                      MiningConfig(MiningSource.ENSEMBLE, seed=0), teacher)


def test_mining_config_validation():
    with pytest.raises(ValidationError):
        MiningConfig(MiningSource.BM25, top_k=5, negatives_per_query=6)
    with pytest.raises(ValidationError):
        MiningConfig(MiningSource.BM25, triplets_per_query=0)


def test_mining_manifest_fields():
    cfg = MiningConfig(MiningSource.ENSEMBLE, top_k=9, seed=4)
    man = mining_manifest(cfg, ["bm25", "model@step1"])
    assert man["source"] == "ensemble" and man["top_k"] == 9 and man["seed"] == 4
    assert man["retrievers"] == ["bm25", "model@step1"]
