import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexsparse.evaluation import (
    ParseError,
    compare_reports,
    corpus_token_stats,
    evaluate,
    mrr_at_k,
    ndcg_at_k,
    paired_t_test,
    parse_metric,
    read_qrels,
    read_run,
    recall_at_k,
    success_at_k,
    token_contributions,
    top_tokens,
    write_qrels,
    write_run,
)
from lexsparse.sparsevec import SparseVector, dot
from lexsparse.vocab import Vocabulary
import oracles


def ranked(*docs):
    return [(d, float(len(docs) - i)) for i, d in enumerate(docs)]


VOCAB = Vocabulary([f"tok{i}" for i in range(16)])


# -- metrics -----------------------------------------------------------------


def test_ndcg_graded_example():
    rep = ndcg_at_k({"q": {"d1": 2, "d2": 1}}, {"q": ranked("d2", "d1", "d3")}, 10)
    assert rep.per_query["q"] == pytest.approx(0.85972, abs=1e-5)
    want = (1 / math.log2(2) + 2 / math.log2(3)) / (2 / math.log2(2) + 1 / math.log2(3))
    assert rep.per_query["q"] == pytest.approx(want, rel=1e-12)


def test_ndcg_ideal_and_zero():
    assert ndcg_at_k({"q": {"d": 1}}, {"q": ranked("d", "x")}, 10).mean == 1.0
    assert ndcg_at_k({"q": {"d": 1, "e": 0}}, {"q": ranked("x", "y")}, 10).mean == 0.0


def test_ndcg_missing_query_scores_zero_and_unjudged_skipped():
    rep = ndcg_at_k({"q1": {"d": 1}, "q2": {"d": 1}}, {"q1": ranked("d"), "q9": ranked("d")}, 10)
    assert rep.per_query == {"q1": 1.0, "q2": 0.0}
    assert rep.mean == 0.5


def test_ndcg_all_grade_zero_counts_as_zero():
    rep = ndcg_at_k({"q": {"d": 0}}, {"q": ranked("d")}, 10)
    assert rep.per_query == {"q": 0.0}


def test_recall_examples():
    qrels = {"q": {"a": 1, "b": 1, "z": 0}}
    assert recall_at_k(qrels, {"q": ranked("x", "a", "y", "w", "v", "b")}, 5).mean == 0.5
    assert recall_at_k(qrels, {"q": ranked("b", "a")}, 5).mean == 1.0
    assert recall_at_k({"q": {"z": 0}}, {"q": ranked("z")}, 5).count == 0


def test_mrr_examples():
    qrels = {"q": {"r": 1}}
    assert mrr_at_k(qrels, {"q": ranked("a", "b", "r")}, 10).mean == 1 / 3
    assert mrr_at_k(qrels, {"q": ranked("a", "b", "r")}, 2).mean == 0.0
    assert mrr_at_k(qrels, {"q": ranked("r")}, 10).mean == 1.0


def test_success_is_hit_rate():
    qrels = {"q": {"a": 1, "b": 1, "c": 1}}
    assert success_at_k(qrels, {"q": ranked("b", "x")}, 1).mean == 1.0
    assert recall_at_k(qrels, {"q": ranked("b", "x")}, 1).mean == pytest.approx(1 / 3)
    assert success_at_k(qrels, {"q": ranked("x", "b")}, 1).mean == 0.0


def test_parse_metric():
    assert parse_metric("NDCG@10") == ("ndcg", 10)
    for bad in ("ndcg", "map@10", "ndcg@x", "ndcg@0"):
        with pytest.raises(ValueError):
            parse_metric(bad)


def test_k_validation():
    with pytest.raises(ValueError):
        ndcg_at_k({}, {}, 0)


qrels_strategy = st.dictionaries(
    st.sampled_from([f"d{i}" for i in range(8)]), st.integers(0, 3), min_size=1, max_size=8
)


@given(qrels_strategy, st.permutations([f"d{i}" for i in range(8)]), st.integers(1, 10))
def test_metrics_bounded_and_rank_determined(judged, order, k):
    qrels = {"q": judged}
    run = {"q": ranked(*order)}
    # strictly increasing transform of scores keeps the ranking
    warped = {"q": [(d, math.exp(s) * 3 + 1) for d, s in run["q"]]}
    for name in ("ndcg", "recall", "mrr", "success"):
        a = evaluate(qrels, run, f"{name}@{k}")
        b = evaluate(qrels, warped, f"{name}@{k}")
        assert a.per_query == b.per_query
        assert all(0.0 <= v <= 1.0 for v in a.per_query.values())


@given(qrels_strategy)
def test_ideal_ranking_ndcg_is_one(judged):
    if max(judged.values()) == 0:
        return
    ideal = sorted(judged, key=lambda d: -judged[d])
    assert ndcg_at_k({"q": judged}, {"q": ranked(*ideal)}, 10).mean == pytest.approx(1.0, abs=1e-12)


# -- t-test ------------------------------------------------------------------


def test_t_test_example():
    res = paired_t_test([2, 0, 2, 0], [0, 0, 0, 0])
    assert res.t == pytest.approx(1.73205, abs=1e-5)
    assert res.df == 3
    assert res.p == pytest.approx(0.18169, abs=1e-4)
    assert res.p == pytest.approx(oracles.student_t_two_sided_p(res.t, 3), abs=1e-8)
    assert not res.significant


def test_t_test_degenerate():
    same = paired_t_test([0.3, 0.5], [0.3, 0.5])
    assert (same.t, same.p) == (0.0, 1.0)
    shifted = paired_t_test([3.0, 4.0, 5.0], [1.0, 2.0, 3.0])
    assert shifted.p == 0.0 and shifted.t == math.inf and shifted.significant
    with pytest.raises(ValueError):
        paired_t_test([1.0], [0.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [0.0])


@given(
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=30),
)
@settings(max_examples=60)
def test_t_test_antisymmetric_and_matches_oracle(pairs):
    a = [x for x, _ in pairs]
    b = [y for _, y in pairs]
    ab = paired_t_test(a, b)
    ba = paired_t_test(b, a)
    assert ab.t == -ba.t
    assert ab.p == ba.p
    assert 0.0 <= ab.p <= 1.0
    if math.isfinite(ab.t) and abs(ab.t) < 50:
        assert ab.p == pytest.approx(oracles.student_t_two_sided_p(ab.t, len(a) - 1), abs=1e-6)


def test_compare_reports_aligns_queries():
    qrels = {"q1": {"a": 1}, "q2": {"a": 1}, "q3": {"a": 1}}
    r1 = ndcg_at_k(qrels, {"q1": ranked("a"), "q2": ranked("a"), "q3": ranked("x", "a")}, 10)
    assert compare_reports(r1, r1).p == 1.0


# -- I/O ---------------------------------------------------------------------


def test_qrels_round_trip(tmp_path):
    path = tmp_path / "qrels.txt"
    qrels = {"q1": {"d1": 2, "d2": 0}, "q2": {"d3": 1}}
    write_qrels(path, qrels)
    assert read_qrels(path) == qrels


@pytest.mark.parametrize(
    "text, msg",
    [
        ("q 0 d\n", ":1:"),
        ("q 0 d 1\nq 0 d x\n", ":2:"),
        ("q 0 d -1\n", "negative"),
        ("q 0 d 1\nq 0 d 2\n", "duplicate"),
    ],
)
def test_qrels_errors(tmp_path, text, msg):
    path = tmp_path / "qrels.txt"
    path.write_text(text)
    with pytest.raises(ParseError, match=msg):
        read_qrels(path)


def test_run_round_trip_and_format(tmp_path):
    path = tmp_path / "run.txt"
    run = {"q1": [("a", 2.5), ("b", 1.0)], "q2": [("c", 0.0)]}
    write_run(path, run, tag="t")
    lines = path.read_text().splitlines()
    assert lines[0].split() == ["q1", "Q0", "a", "1", "2.5", "t"]
    assert all(len(line.split()) == 6 for line in lines)
    assert read_run(path) == run


def test_run_sorted_by_score_with_stable_ties(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("q Q0 a 1 1.0 t\nq Q0 b 2 3.0 t\nq Q0 c 3 1.0 t\n")
    assert [d for d, _ in read_run(path)["q"]] == ["b", "a", "c"]


@pytest.mark.parametrize("text", ["q Q0 a 1 t\n", "q Q0 a 1 x t\n", "q Q0 a 1 1 t\nq Q0 a 2 1 t\n"])
def test_run_errors(tmp_path, text):
    path = tmp_path / "run.txt"
    path.write_text(text)
    with pytest.raises(ParseError, match=":[12]:"):
        read_run(path)


# -- token reports -----------------------------------------------------------


def sv(pairs):
    return SparseVector.from_pairs(pairs)


def test_top_tokens():
    v = sv([(1, 0.2), (4, 0.9)])
    assert top_tokens(v, VOCAB, 1) == [("tok4", 0.9)]
    assert top_tokens(v, VOCAB, 10) == [("tok4", 0.9), ("tok1", 0.2)]
    assert top_tokens(sv([(7, 0.5), (2, 0.5)]), VOCAB, 2) == [("tok2", 0.5), ("tok7", 0.5)]
    with pytest.raises(ValueError):
        top_tokens(v, VOCAB, 0)


def test_contributions_examples():
    c = token_contributions(sv([(1, 2.0)]), sv([(1, 3.0)]), VOCAB, 5)
    assert c.top == [("tok1", 6.0)] and c.total == 6.0
    c = token_contributions(sv([(1, 2.0)]), sv([(2, 3.0)]), VOCAB, 5)
    assert c.top == [] and c.total == 0.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_contributions_sum_to_dot(seed, m):
    r = np.random.default_rng(seed)

    def rand():
        dims = r.choice(16, int(r.integers(0, 12)), replace=False)
        return sv(zip(dims.tolist(), r.uniform(0.01, 5, dims.size).tolist()))

    q, p = rand(), rand()
    c = token_contributions(q, p, VOCAB, m)
    assert abs(c.total - dot(q, p)) <= 1e-9
    assert len(c.top) <= m
    weights = [w for _, w in c.top]
    assert weights == sorted(weights, reverse=True)


def test_corpus_stats_examples():
    s = corpus_token_stats([sv([(1, 2.0)]), SparseVector.empty()], VOCAB, 1)
    assert s.top == [("tok1", 1.0)]
    same = corpus_token_stats([sv([(3, 0.5), (4, 1.5)])] * 3, VOCAB, 2)
    assert same.top == [("tok4", 1.5), ("tok3", 0.5)]
    assert (same.min, same.max) == (0.0, 1.5)
    with pytest.raises(ValueError):
        corpus_token_stats([], VOCAB, 1)


def test_corpus_stats_dense_oracle(rng):
    vecs = []
    for _ in range(25):
        dims = rng.choice(16, int(rng.integers(0, 10)), replace=False)
        vecs.append(sv(zip(dims.tolist(), rng.uniform(0.01, 3, dims.size).tolist())))
    dense = np.array([v.to_dense(16) for v in vecs]).mean(axis=0)
    s = corpus_token_stats(vecs, VOCAB, 16)
    got = {t: w for t, w in s.top}
    for i in range(16):
        assert abs(got[f"tok{i}"] - dense[i]) <= 1e-9
    assert s.median == pytest.approx(float(np.median(dense)), abs=1e-9)
