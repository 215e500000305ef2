"""NDCG@k retrieval effectiveness."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Qrels, Query
from .encoder import EncoderBackend
from .exceptions import EvaluationError, ValidationError
from .index import DenseIndex, retrieve
from .utils import log_message, run_parallel, validate_positive_int


RETRIEVAL_DEPTH = 100


@dataclass(frozen=True)
class EvalResult:
    metric: str
    per_query: Dict[str, float]
    mean: float
    excluded: Tuple[str, ...] = field(default=())

    def to_record(self, **extra: Any) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(extra)
        record.update({
            "metric": self.metric,
            "mean": self.mean,
            "per_query": self.per_query,
            "excluded": list(self.excluded),
        })
        return record


def _gain(grade: int) -> float:
    return float(2 ** max(grade, 0) - 1)


def dcg(grades: Sequence[int], k: int) -> float:
    """Sum of (2^grade - 1) / log2(i + 1) over ranks i = 1..k."""
    return float(sum(_gain(g) / np.log2(i + 2) for i, g in enumerate(grades[:k])))


def ideal_dcg(qrels: Qrels, query_id: str, k: int = 10) -> float:
    """DCG of all judged documents of a query in descending grade order."""
    grades = sorted(qrels.for_query(query_id).values(), reverse=True)
    return dcg(grades, k)


def ndcg_at_k(ranked_doc_ids: Sequence[str], qrels: Qrels, query_id: str, k: int = 10) -> float:
    """NDCG@k of one ranking; unjudged documents count as grade 0.

    Returns 0.0 when the query has no positive judgment (zero IDCG).

    Raises:
        ValidationError: If the ranking is empty or k < 1.
    """
    k = validate_positive_int(k, "k")
    if not ranked_doc_ids:
        raise ValidationError(f"Empty ranking for query {query_id}")
    ideal = ideal_dcg(qrels, query_id, k)
    if ideal == 0.0:
        return 0.0
    grades = [qrels.grade(query_id, doc_id) for doc_id in ranked_doc_ids]
    return dcg(grades, k) / ideal


def evaluate_run(index: DenseIndex, backend: EncoderBackend, queries: Sequence[Query], qrels: Qrels,
                 k: int = 10, workers: int = 1, depth: int = RETRIEVAL_DEPTH) -> EvalResult:
    """Mean NDCG@k over every query with a positive judgment.

    Each query retrieves the top max(k, depth) documents. Queries with zero
    IDCG are left out of the mean and listed in ``excluded``.

    Raises:
        FingerprintMismatchError: If backend did not build index.
        EvaluationError: If no query is evaluable.
    """
    k = validate_positive_int(k, "k")
    index.check_backend(backend)
    evaluable: List[Query] = []
    excluded: List[str] = []
    for query in queries:
        if ideal_dcg(qrels, query.query_id, k) > 0.0:
            evaluable.append(query)
        else:
            excluded.append(query.query_id)

    if excluded:
        log_message(f"Excluded {len(excluded)} queries with zero IDCG from ndcg@{k}", "WARN")
    if not evaluable:
        raise EvaluationError("No evaluable queries: no query has a relevant judgment")

    def score_query(query: Query) -> float:
        hits = retrieve(index, backend.encode(query.text, role="query"), max(k, depth))
        return ndcg_at_k([doc_id for doc_id, _ in hits], qrels, query.query_id, k)

    scores = run_parallel(score_query, evaluable, workers if backend.thread_safe else 1)
    per_query = {query.query_id: s for query, s in zip(evaluable, scores)}
    mean = float(np.mean(scores))
    log_message(f"ndcg@{k}: mean={mean:.4f} over {len(per_query)} queries")
    return EvalResult(metric=f"ndcg@{k}", per_query=per_query, mean=mean, excluded=tuple(excluded))


@dataclass(frozen=True)
class EvalComparison:
    """One metric under a baseline and an adapted model."""

    baseline: EvalResult
    adapted: EvalResult

    @property
    def absolute(self) -> float:
        return self.adapted.mean - self.baseline.mean

    @property
    def percentage(self) -> Optional[float]:
        """Relative change in percent; None when the baseline mean is 0."""
        if self.baseline.mean == 0.0:
            return None
        return 100.0 * self.absolute / self.baseline.mean

    def to_record(self, **extra: Any) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(extra)
        record.update({
            "metric": self.baseline.metric,
            "baseline": self.baseline.to_record(),
            "adapted": self.adapted.to_record(),
            "absolute": self.absolute,
            "percentage": self.percentage,
        })
        return record


def compare_runs(index_a: DenseIndex, backend_a: EncoderBackend, index_b: DenseIndex, backend_b: EncoderBackend,
                 queries: Sequence[Query], qrels: Qrels, k: int = 10, workers: int = 1,
                 depth: int = RETRIEVAL_DEPTH) -> EvalComparison:
    """Evaluate a baseline and an adapted model on the same queries and qrels."""
    baseline = evaluate_run(index_a, backend_a, queries, qrels, k, workers, depth)
    adapted = evaluate_run(index_b, backend_b, queries, qrels, k, workers, depth)
    return EvalComparison(baseline=baseline, adapted=adapted)
