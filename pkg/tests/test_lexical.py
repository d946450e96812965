"""BM25 scoring against a hand oracle, and run fusion properties."""

import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsrkit.core import ValidationError, WarningCounter, rank_candidates
from lsrkit.lexical import (
    Bm25Params,
    bm25_retrieve,
    bm25_run,
    bm25_score_doc,
    build_bm25,
    fuse_sum,
)

token_lists = st.lists(st.integers(0, 9), min_size=1, max_size=12)


def hand_bm25(corpus_list, query, k1, b):
    """Independent from-the-formula scorer over list-of-token-lists."""
    n = len(corpus_list)
    avgdl = sum(len(d) for d in corpus_list) / n
    df = Counter()
    for doc in corpus_list:
        df.update(set(doc))
    out = []
    for doc in corpus_list:
        tf = Counter(doc)
        score = 0.0
        for term in query:  # multiplicity: repeated terms add repeatedly
            if tf[term] == 0:
                continue
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            norm = k1 * (1.0 - b + b * len(doc) / avgdl)
            score += idf * tf[term] * (k1 + 1.0) / (tf[term] + norm)
        out.append(score)
    return out


def test_bm25_hand_worked_example():
    # two docs, avgdl 3; term 1: df=1, idf=ln(1+1.5/1.5)=ln 2
    corpus = {"a": (1, 1, 2), "b": (2, 3, 4)}
    bm = build_bm25(corpus)
    p = Bm25Params(k1=1.0, b=0.5)
    # doc a: tf=2, norm=1*(0.5+0.5*3/3)=1.0 -> ln2 * 2*2/(2+1)
    want = math.log(2.0) * 4.0 / 3.0
    assert abs(bm25_score_doc(bm, (1,), 0, p) - want) < 1e-12
    assert bm25_score_doc(bm, (1,), 1, p) == 0.0
    got = bm25_retrieve(bm, (1,), p, 5)
    assert got[0][0] == "a" and abs(got[0][1] - want) < 1e-12


@given(
    st.lists(token_lists, min_size=1, max_size=10),
    token_lists,
    st.floats(0.2, 2.0),
    st.floats(0.0, 1.0),
)
@settings(max_examples=200, deadline=None)
def test_bm25_retrieve_matches_hand_oracle(docs, query, k1, b):
    corpus = {f"d{i:02d}": tuple(toks) for i, toks in enumerate(docs)}
    bm = build_bm25(corpus)
    params = Bm25Params(k1=k1, b=b)
    scores = hand_bm25(docs, query, k1, b)
    want = rank_candidates(
        ((f"d{i:02d}", s) for i, s in enumerate(scores) if s > 0), 10
    )
    got = bm25_retrieve(bm, tuple(query), params, 10)
    assert [d for d, _ in got] == [d for d, _ in want]
    for (_, gs), (_, ws) in zip(got, want):
        assert abs(gs - ws) < 1e-9


@given(st.lists(token_lists, min_size=1, max_size=10), token_lists)
@settings(max_examples=100, deadline=None)
def test_bm25_retrieve_agrees_with_reference_scorer(docs, query):
    corpus = {f"d{i:02d}": tuple(toks) for i, toks in enumerate(docs)}
    bm = build_bm25(corpus)
    params = Bm25Params()
    got = dict(bm25_retrieve(bm, tuple(query), params, len(docs)))
    for i, doc_id in enumerate(bm.doc_ids):
        ref = bm25_score_doc(bm, tuple(query), i, params)
        if ref > 0:
            assert abs(got[doc_id] - ref) < 1e-9
        else:
            assert doc_id not in got


def test_bm25_query_multiplicity_scales_contribution():
    corpus = {"a": (1, 2), "b": (3, 4)}
    bm = build_bm25(corpus)
    params = Bm25Params()
    single = bm25_retrieve(bm, (1,), params, 5)
    double = bm25_retrieve(bm, (1, 1), params, 5)
    assert abs(double[0][1] - 2 * single[0][1]) < 1e-12


def test_bm25_idf_always_positive():
    # term present in every document still gets a positive idf
    corpus = {f"d{i}": (7,) for i in range(100)}
    bm = build_bm25(corpus)
    assert bm.idf(7) > 0
    got = bm25_retrieve(bm, (7,), Bm25Params(), 100)
    assert len(got) == 100 and all(s > 0 for _, s in got)


def test_bm25_unseen_term_and_empty_query():
    bm = build_bm25({"a": (1, 2)})
    assert bm25_retrieve(bm, (999,), Bm25Params(), 5) == []
    assert bm25_retrieve(bm, (), Bm25Params(), 5) == []
    assert bm.idf(999) == math.log(1.0 + 1.5 / 0.5)


def test_bm25_run_covers_all_queries():
    bm = build_bm25({"a": (1,), "b": (2,)})
    run = bm25_run(bm, {"q1": (1,), "q2": (9,)}, Bm25Params(), 5)
    assert set(run) == {"q1", "q2"}
    assert run["q1"][0][0] == "a" and run["q2"] == []


def test_bm25_params_validation():
    with pytest.raises(ValidationError):
        Bm25Params(k1=0.0)
    with pytest.raises(ValidationError):
        Bm25Params(b=1.5)
    with pytest.raises(ValidationError):
        Bm25Params(k1=float("nan"))


def test_fuse_sum_hand_example():
    run_a = {"q": [("d1", 3.0), ("d2", 1.0)]}
    run_b = {"q": [("d2", 2.0), ("d3", 2.5)]}
    fused = fuse_sum(run_a, run_b, k=3)
    assert fused["q"] == [("d1", 3.0), ("d2", 3.0), ("d3", 2.5)]


def test_fuse_sum_one_sided_query_counts_warning():
    warnings = WarningCounter()
    fused = fuse_sum({"q1": [("d1", 1.0)]}, {"q2": [("d2", 2.0)]}, k=5, warnings=warnings)
    assert fused == {"q1": [("d1", 1.0)], "q2": [("d2", 2.0)]}
    assert warnings.counts["query-one-sided"] == 2


def test_fuse_sum_normalize_rescales_each_side():
    run_a = {"q": [("d1", 100.0), ("d2", 50.0)]}  # -> 1.0, 0.0
    run_b = {"q": [("d2", 0.2), ("d3", 0.1)]}  # -> 1.0, 0.0
    fused = fuse_sum(run_a, run_b, k=3, normalize=True)
    # d1 = 1.0 + 0, d2 = 0.0 + 1.0; the tie breaks by ascending doc id
    assert fused["q"] == [("d1", 1.0), ("d2", 1.0), ("d3", 0.0)]


def test_fuse_sum_degenerate_constant_run_normalizes_to_zero():
    fused = fuse_sum(
        {"q": [("d1", 5.0), ("d2", 5.0)]},
        {"q": [("d1", 1.0), ("d3", 0.5)]},
        k=3,
        normalize=True,
    )
    scores = dict(fused["q"])
    assert scores["d1"] == 1.0  # 0 + 1.0


@given(
    st.dictionaries(
        st.sampled_from(["d1", "d2", "d3", "d4"]), st.floats(0.1, 5.0), min_size=1
    ),
    st.dictionaries(
        st.sampled_from(["d3", "d4", "d5"]), st.floats(0.1, 5.0), min_size=1
    ),
)
@settings(max_examples=100, deadline=None)
def test_fuse_sum_equals_union_resort(a_scores, b_scores):
    to_run = lambda d: sorted(d.items(), key=lambda kv: (-kv[1], kv[0]))
    fused = fuse_sum({"q": to_run(a_scores)}, {"q": to_run(b_scores)}, k=10)
    union = set(a_scores) | set(b_scores)
    want = rank_candidates(
        ((d, a_scores.get(d, 0.0) + b_scores.get(d, 0.0)) for d in union), 10
    )
    assert fused["q"] == want


def test_fuse_sum_validation():
    with pytest.raises(ValidationError):
        fuse_sum({}, {}, k=0)
