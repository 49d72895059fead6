"""Metric definitions, run evaluation, and the independent reference oracle."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalbridge.errors import EmptyPositives, InvalidArtifact, MissingQrels
from modalbridge.evaluation import (
    RankedRun,
    evaluate_run,
    format_report_table,
    load_run,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    report_to_json,
    write_run,
)
from modalbridge.similarity import ScoredCandidate
from modalbridge.store import Modality, Qrels


def reference_metrics(ranked: list[str], positives: set[str], k: int) -> dict[str, float]:
    """Straight-line reference implementation used as the oracle."""
    hit_ranks = []
    for rank, item in enumerate(ranked[:k]):
        if item in positives:
            hit_ranks.append(rank + 1)
    recall = 100.0 * len(hit_ranks) / len(positives)
    mrr = 100.0 / hit_ranks[0] if hit_ranks else 0.0
    dcg = 0.0
    for rank in hit_ranks:
        dcg += 1.0 / math.log2(rank + 1)
    idcg = 0.0
    for rank in range(1, min(len(positives), k) + 1):
        idcg += 1.0 / math.log2(rank + 1)
    return {"recall": recall, "mrr": mrr, "ndcg": 100.0 * dcg / idcg}


# --- hand cases -----------------------------------------------------------------


def test_recall_single_positive_hit_at_rank_3():
    ranked = ["x1", "x2", "a", "x3"]
    assert recall_at_k(ranked, {"a"}, 20) == 100.0


def test_recall_fraction_of_positives():
    ranked = ["a", "x", "b", "y"]
    assert recall_at_k(ranked, {"a", "b", "c", "d"}, 4) == 50.0


def test_recall_miss_is_zero():
    assert recall_at_k(["x", "y"], {"a"}, 20) == 0.0


def test_recall_any_hit_mode():
    ranked = ["a", "x"]
    assert recall_at_k(ranked, {"a", "b", "c"}, 2, mode="any-hit") == 100.0
    assert recall_at_k(["x", "y"], {"a", "b"}, 2, mode="any-hit") == 0.0


def test_mrr_rank_1():
    assert mrr_at_k(["a", "b"], {"a"}, 20) == 100.0


def test_mrr_rank_4():
    assert mrr_at_k(["x", "y", "z", "a"], {"a"}, 20) == 25.0


def test_mrr_beyond_cutoff_is_zero():
    ranked = [f"x{i}" for i in range(20)] + ["a"]
    assert mrr_at_k(ranked, {"a"}, 20) == 0.0


def test_ndcg_rank_1_is_100():
    assert ndcg_at_k(["a", "x"], {"a"}, 20) == 100.0


def test_ndcg_single_positive_rank_3_is_50():
    assert ndcg_at_k(["x", "y", "a"], {"a"}, 20) == 50.0


def test_ndcg_two_positives_ranks_1_2_is_100():
    assert ndcg_at_k(["a", "b", "x"], {"a", "b"}, 20) == 100.0


def test_empty_positives_rejected():
    for fn in (recall_at_k, mrr_at_k, ndcg_at_k):
        with pytest.raises(EmptyPositives):
            fn(["a"], set(), 5)


def test_metrics_accept_scored_candidates():
    ranked = [ScoredCandidate("a", Modality.TEXT, 0.9), ScoredCandidate("b", Modality.IMAGE, 0.5)]
    assert recall_at_k(ranked, {"b"}, 2) == 100.0
    assert mrr_at_k(ranked, {"b"}, 2) == 50.0


# --- properties -------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_monotone_in_k_and_bounds(data):
    n = data.draw(st.integers(1, 30))
    ranked = [f"d{i}" for i in range(n)]
    positives = set(data.draw(st.lists(st.sampled_from(ranked + ["q1", "q2"]), min_size=1, max_size=6)))
    ks = sorted(data.draw(st.lists(st.integers(1, 40), min_size=2, max_size=6)))
    values_by_k = {
        k: {
            "recall": recall_at_k(ranked, positives, k),
            "mrr": mrr_at_k(ranked, positives, k),
            "ndcg": ndcg_at_k(ranked, positives, k),
        }
        for k in ks
    }
    for values in values_by_k.values():
        for value in values.values():
            assert 0.0 <= value <= 100.0 + 1e-12
    for a, b in zip(ks, ks[1:]):
        assert values_by_k[b]["recall"] >= values_by_k[a]["recall"] - 1e-12
        assert values_by_k[b]["mrr"] >= values_by_k[a]["mrr"] - 1e-12
        # ndcg is monotone once k covers the positives (the k-truncated ideal
        # stops growing); below that a miss at the new rank can dip it
        if a >= len(positives):
            assert values_by_k[b]["ndcg"] >= values_by_k[a]["ndcg"] - 1e-12


def test_ndcg_can_dip_while_k_is_below_positive_count():
    # documented deviation: with binary gains and a k-truncated ideal, adding
    # a missed rank while k < |positives| lowers the ratio
    ranked = ["a", "x", "b"]
    positives = {"a", "b"}
    assert ndcg_at_k(ranked, positives, 1) == 100.0
    assert ndcg_at_k(ranked, positives, 2) < 100.0
    assert ndcg_at_k(ranked, positives, 3) > ndcg_at_k(ranked, positives, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_permuting_tail_below_last_positive_is_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    ranked = [f"d{i}" for i in range(n)]
    positives = set(rng.choice(ranked[: max(1, n // 2)], size=max(1, n // 4), replace=False))
    k = n
    last_pos_rank = max(i for i, x in enumerate(ranked) if x in positives)
    tail = ranked[last_pos_rank + 1 :]
    rng.shuffle(tail)
    permuted = ranked[: last_pos_rank + 1] + tail
    assert recall_at_k(ranked, positives, k) == recall_at_k(permuted, positives, k)
    assert mrr_at_k(ranked, positives, k) == mrr_at_k(permuted, positives, k)


def test_ndcg_100_iff_ideal_prefix():
    # all of the first min(|pos|, k) ranks are positives <-> ndcg == 100
    assert ndcg_at_k(["a", "b", "x", "c"], {"a", "b"}, 20) == 100.0
    assert ndcg_at_k(["a", "x", "b"], {"a", "b"}, 20) < 100.0
    assert ndcg_at_k(["a", "b"], {"a", "b", "c"}, 2) == 100.0  # k truncates the ideal


# --- randomized oracle --------------------------------------------------------------


def test_metrics_match_reference_on_randomized_runs():
    rng = np.random.default_rng(31337)
    for _ in range(50):
        n = int(rng.integers(1, 60))
        universe = [f"d{i}" for i in range(80)]
        ranked = list(rng.choice(universe, size=n, replace=False))
        positives = set(rng.choice(universe, size=int(rng.integers(1, 8)), replace=False))
        k = int(rng.integers(1, 70))
        expected = reference_metrics(ranked, positives, k)
        assert abs(recall_at_k(ranked, positives, k) - expected["recall"]) < 1e-9
        assert abs(mrr_at_k(ranked, positives, k) - expected["mrr"]) < 1e-9
        assert abs(ndcg_at_k(ranked, positives, k) - expected["ndcg"]) < 1e-9


# --- evaluate_run ---------------------------------------------------------------------


def run_of(per_query: dict[str, list[str]], method="cos", k=20) -> RankedRun:
    return RankedRun(
        method=method,
        k=k,
        per_query={
            qid: [ScoredCandidate(i, Modality.TEXT, 1.0 - 0.01 * r) for r, i in enumerate(ids)]
            for qid, ids in per_query.items()
        },
    )


def test_evaluate_run_perfect_single_query():
    run = run_of({"q1": ["a", "x", "y"]})
    report = evaluate_run(run, Qrels({"q1": frozenset({"a"})}), {"q1": "TextQ"})
    assert report.aggregates["overall"] == {"recall": 100.0, "mrr": 100.0, "ndcg": 100.0}
    assert report.aggregates["TextQ"]["recall"] == 100.0
    assert report.counts == {"TextQ": 1, "overall": 1}


def test_evaluate_run_mean_of_two_queries():
    run = run_of({"q1": ["a"], "q2": ["x"]})
    qrels = Qrels({"q1": frozenset({"a"}), "q2": frozenset({"b"})})
    report = evaluate_run(run, qrels)
    assert report.aggregates["overall"]["recall"] == 50.0
    assert report.counts["unknown"] == 2


def test_evaluate_run_groups_by_qtype():
    run = run_of({"q1": ["a"], "q2": ["b"], "q3": ["x"]})
    qrels = Qrels({q: frozenset({chr(97 + i)}) for i, q in enumerate(["q1", "q2", "q3"])})
    qtypes = {"q1": "TextQ", "q2": "ImageQ"}
    report = evaluate_run(run, qrels, qtypes)
    assert report.counts == {"TextQ": 1, "ImageQ": 1, "unknown": 1, "overall": 3}
    assert report.aggregates["ImageQ"]["recall"] == 100.0
    assert report.aggregates["unknown"]["recall"] == 0.0


def test_evaluate_run_missing_qrels():
    run = run_of({"q1": ["a"]})
    with pytest.raises(MissingQrels):
        evaluate_run(run, Qrels({"q9": frozenset({"a"})}))


def test_evaluate_run_rejects_cutoff_above_run_depth():
    run = run_of({"q1": ["a"]}, k=20)
    with pytest.raises(InvalidArtifact):
        evaluate_run(run, Qrels({"q1": frozenset({"a"})}), k=100)


def test_evaluate_run_aggregate_is_mean_of_per_query():
    rng = np.random.default_rng(4)
    per_query = {}
    qrels = {}
    for i in range(20):
        ids = [f"d{j}" for j in rng.permutation(30)[:10]]
        per_query[f"q{i:02d}"] = ids
        qrels[f"q{i:02d}"] = frozenset(np.random.default_rng(i).choice(ids + ["zz"], size=2))
    run = run_of(per_query, k=10)
    report = evaluate_run(run, Qrels(qrels))
    manual = sum(v["ndcg"] for v in report.per_query.values()) / len(report.per_query)
    assert abs(report.aggregates["overall"]["ndcg"] - manual) < 1e-12


# --- run files and reports --------------------------------------------------------------


def test_run_file_roundtrip(tmp_path):
    run = RankedRun(
        method="std",
        k=3,
        per_query={
            "q1": [
                ScoredCandidate("i1", Modality.IMAGE, 0.34, std_score=1.087),
                ScoredCandidate("t1", Modality.TEXT, 0.80, std_score=-0.7069),
            ]
        },
    )
    write_run(tmp_path / "run.jsonl", run, config={"method": "std"})
    loaded, config = load_run(tmp_path / "run.jsonl")
    assert config == {"method": "std"}
    assert loaded.method == "std" and loaded.k == 3
    assert loaded.per_query["q1"] == list(run.per_query["q1"])


def test_run_file_null_std_scores(tmp_path):
    run = RankedRun(
        method="cos", k=2,
        per_query={"q1": [ScoredCandidate("t1", Modality.TEXT, 0.5)]},
    )
    write_run(tmp_path / "run.jsonl", run)
    loaded, _ = load_run(tmp_path / "run.jsonl")
    assert loaded.per_query["q1"][0].std_score is None


def test_run_file_rejects_inconsistent_rows(tmp_path):
    (tmp_path / "run.jsonl").write_text(
        '{"query_id": "q1", "ranking": [], "method": "cos", "k": 5}\n'
        '{"query_id": "q2", "ranking": [], "method": "std", "k": 5}\n'
    )
    with pytest.raises(InvalidArtifact):
        load_run(tmp_path / "run.jsonl")


def test_report_json_and_table():
    run = run_of({"q1": ["a", "x"], "q2": ["y", "b"]})
    qrels = Qrels({"q1": frozenset({"a"}), "q2": frozenset({"b"})})
    qtypes = {"q1": "TextQ", "q2": "ImageQ"}
    reports = {k: evaluate_run(run, qrels, qtypes, k=k) for k in (1, 2)}
    obj = report_to_json({"cos": reports}, {"cos": "run.jsonl"}, "fraction")
    assert obj["ks"] == [1, 2]
    assert obj["runs"]["cos"]["by_k"]["2"]["aggregates"]["overall"]["recall"] == 100.0
    table = format_report_table({"cos": reports}, 2)
    assert "Recall@2" in table and "cos" in table and "overall" in table
