"""Tests for NDCG@k and run evaluation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.corpus import Qrels
from src.evaluation import EvalComparison, EvalResult, compare_runs, dcg, evaluate_run, ideal_dcg, ndcg_at_k
from src.exceptions import EvaluationError, FingerprintMismatchError, ValidationError
from src.index import build_index, retrieve


def _oracle_ndcg(ranking, grades, k):
    """Direct formula, written independently of the module under test."""
    gain = 0.0
    for rank, doc_id in enumerate(ranking[:k], start=1):
        gain += (2 ** grades.get(doc_id, 0) - 1) / math.log2(rank + 1)
    ideal = 0.0
    for rank, grade in enumerate(sorted(grades.values(), reverse=True)[:k], start=1):
        ideal += (2 ** grade - 1) / math.log2(rank + 1)
    return gain / ideal


def _qrels(grades, query_id="q"):
    return Qrels(judgments={(query_id, d): g for d, g in grades.items()})


class TestNdcg:
    """Test ndcg_at_k."""

    def test_perfect(self):
        """Test a single relevant doc at rank 1 scores 1."""
        assert ndcg_at_k(["d1", "d2", "d3"], _qrels({"d1": 1}), "q") == 1.0

    def test_second_rank(self):
        """Test the relevant doc at rank 2 scores 1/log2(3)."""
        assert ndcg_at_k(["d2", "d1", "d3"], _qrels({"d1": 1}), "q") == pytest.approx(0.6309, abs=1e-4)

    def test_unjudged_count_as_zero(self):
        """Test unjudged documents add no gain."""
        assert ndcg_at_k(["x", "y", "d1"], _qrels({"d1": 1}), "q") == pytest.approx(0.5)

    def test_zero_idcg(self):
        """Test queries without positive judgments score 0."""
        assert ideal_dcg(_qrels({"d1": 0}), "q") == 0.0
        assert ndcg_at_k(["d1"], _qrels({"d1": 0}), "q") == 0.0

    def test_empty_ranking(self):
        """Test an empty ranking is a precondition violation."""
        with pytest.raises(ValidationError):
            ndcg_at_k([], _qrels({"d1": 1}), "q")

    def test_dcg_cutoff(self):
        """Test only the first k grades count."""
        assert dcg([0, 0, 3], 2) == 0.0

    def test_oracle_equivalence(self):
        """Test 100 random 50-doc rankings against the direct formula."""
        rng = np.random.default_rng(2024)
        docs = [f"d{i}" for i in range(50)]
        for _ in range(100):
            grades = {d: int(rng.integers(0, 4)) for d in rng.choice(docs, size=12, replace=False)}
            if not any(grades.values()):
                grades[docs[0]] = 1
            ranking = list(rng.permutation(docs))
            assert ndcg_at_k(ranking, _qrels(grades), "q") == pytest.approx(_oracle_ndcg(ranking, grades, 10), abs=1e-9)


_grades = st.dictionaries(st.sampled_from([f"d{i}" for i in range(20)]), st.integers(1, 3), min_size=1, max_size=8)


class TestNdcgProperties:
    """Property tests for ranking invariances."""

    @settings(max_examples=60, deadline=None)
    @given(_grades, st.randoms(use_true_random=False))
    def test_tail_permutation_invariance(self, grades, random):
        """Test shuffling documents beyond rank k never changes NDCG@k."""
        ranking = [f"d{i}" for i in range(20)]
        random.shuffle(ranking)
        tail = ranking[10:]
        random.shuffle(tail)
        qrels = _qrels(grades)
        assert ndcg_at_k(ranking[:10] + tail, qrels, "q") == ndcg_at_k(ranking, qrels, "q")

    @settings(max_examples=60, deadline=None)
    @given(_grades, st.randoms(use_true_random=False), st.integers(0, 19), st.integers(0, 19))
    def test_moving_relevant_up_never_hurts(self, grades, random, i, j):
        """Test swapping a higher-graded document upward never lowers NDCG@k."""
        ranking = [f"d{n}" for n in range(20)]
        random.shuffle(ranking)
        hi, lo = min(i, j), max(i, j)
        qrels = _qrels(grades)
        if qrels.grade("q", ranking[lo]) <= qrels.grade("q", ranking[hi]):
            return
        swapped = list(ranking)
        swapped[hi], swapped[lo] = swapped[lo], swapped[hi]
        assert ndcg_at_k(swapped, qrels, "q") >= ndcg_at_k(ranking, qrels, "q") - 1e-12

    @settings(max_examples=60, deadline=None)
    @given(_grades, st.randoms(use_true_random=False))
    def test_range(self, grades, random):
        """Test scores stay in [0, 1]."""
        ranking = [f"d{i}" for i in range(20)]
        random.shuffle(ranking)
        assert 0.0 <= ndcg_at_k(ranking, _qrels(grades), "q") <= 1.0 + 1e-12


class TestEvaluateRun:
    """Test evaluate_run."""

    def test_planted_relevance_scores_one(self, small_index, encoder, queries):
        """Test judging each query's top document relevant gives mean 1.0."""
        judgments = {}
        for query in queries:
            top = retrieve(small_index, encoder.encode(query.text, role="query"), 1)[0][0]
            judgments[(query.query_id, top)] = 1
        result = evaluate_run(small_index, encoder, queries, Qrels(judgments=judgments))
        assert result.mean == pytest.approx(1.0)
        assert set(result.per_query) == {q.query_id for q in queries}

    def test_mean_and_range(self, small_index, encoder, queries, qrels):
        """Test mean is the arithmetic mean of per-query scores in [0, 1]."""
        result = evaluate_run(small_index, encoder, queries, qrels, k=10)
        assert result.metric == "ndcg@10"
        assert all(0.0 <= s <= 1.0 for s in result.per_query.values())
        assert result.mean == pytest.approx(sum(result.per_query.values()) / len(result.per_query))

    def test_zero_idcg_excluded(self, small_index, encoder, queries):
        """Test queries without positive judgments are excluded and listed."""
        judged = Qrels(judgments={("q1", "d1"): 1, ("q2", "d2"): 0})
        result = evaluate_run(small_index, encoder, queries, judged)
        assert list(result.per_query) == ["q1"]
        assert result.excluded == ("q2", "q3")

    def test_no_evaluable_queries(self, small_index, encoder, queries):
        """Test empty qrels raise EvaluationError."""
        with pytest.raises(EvaluationError):
            evaluate_run(small_index, encoder, queries, Qrels())

    def test_fingerprint_checked(self, small_index, other_encoder, queries, qrels):
        """Test a mismatched backend is rejected."""
        with pytest.raises(FingerprintMismatchError):
            evaluate_run(small_index, other_encoder, queries, qrels)

    def test_workers_do_not_change_result(self, small_index, encoder, queries, qrels):
        """Test per-query parallelism keeps the ordered reduction."""
        assert evaluate_run(small_index, encoder, queries, qrels, workers=3) == \
            evaluate_run(small_index, encoder, queries, qrels, workers=1)


class TestCompareRuns:
    """Test compare_runs and EvalComparison."""

    def test_same_model_zero_change(self, small_index, encoder, queries, qrels):
        """Test a model compared with itself has zero absolute and percentage change."""
        comparison = compare_runs(small_index, encoder, small_index, encoder, queries, qrels)
        assert comparison.baseline == comparison.adapted
        assert comparison.absolute == 0.0
        assert comparison.percentage == 0.0

    def test_two_models(self, small_index, documents, encoder, other_encoder, queries, qrels):
        """Test both runs match evaluate_run and the deltas follow from their means."""
        index_b = build_index(documents, other_encoder)
        comparison = compare_runs(small_index, encoder, index_b, other_encoder, queries, qrels)
        assert comparison.baseline == evaluate_run(small_index, encoder, queries, qrels)
        assert comparison.adapted == evaluate_run(index_b, other_encoder, queries, qrels)
        assert comparison.absolute == pytest.approx(comparison.adapted.mean - comparison.baseline.mean)
        assert comparison.percentage == pytest.approx(100.0 * comparison.absolute / comparison.baseline.mean)
        record = comparison.to_record(run="x")
        assert record["run"] == "x" and record["metric"] == "ndcg@10"
        assert record["baseline"]["mean"] == comparison.baseline.mean

    def test_zero_baseline_has_no_percentage(self):
        """Test a zero baseline mean leaves the percentage undefined."""
        comparison = EvalComparison(EvalResult("ndcg@10", {"q": 0.0}, 0.0), EvalResult("ndcg@10", {"q": 0.5}, 0.5))
        assert comparison.absolute == 0.5
        assert comparison.percentage is None
        assert comparison.to_record()["percentage"] is None
