"""Instance, ranking and title-span explanations built on attribute_side."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .attribution import AttributionResult, IGConfig, attribute_side
from .corpus import Document, Qrels, Query
from .encoder import EncoderBackend, TokenizedText
from .exceptions import DenseExplainException, EncoderError, ExplainError
from .index import DenseIndex, retrieve
from .utils import log_message, run_parallel, validate_positive_int


DEFAULT_K_EXPLAIN = 25


@dataclass(frozen=True)
class InstanceExplanation:
    query_id: str
    doc_id: str
    query_attr: AttributionResult
    doc_attr: AttributionResult
    score: float

    def records(self, **extra: Any) -> List[Dict[str, Any]]:
        """One line-delimited record per side."""
        return [
            attr.to_record(query_id=self.query_id, doc_id=self.doc_id, **extra)
            for attr in (self.query_attr, self.doc_attr)
        ]


@dataclass(frozen=True)
class RankingExplanation:
    """Document-side token scores summed by token string over the top-k documents."""

    query_id: str
    k: int
    per_token_totals: Dict[str, float]
    contributing_docs: Dict[str, int]
    documents: Tuple[Tuple[str, float], ...] = ()
    positive_parts: Optional[Dict[str, float]] = None
    negative_parts: Optional[Dict[str, float]] = None

    def to_record(self, **extra: Any) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(extra)
        record.update({
            "query_id": self.query_id,
            "k": self.k,
            "documents": [[doc_id, s] for doc_id, s in self.documents],
            "per_token_totals": self.per_token_totals,
            "contributing_docs": self.contributing_docs,
        })
        if self.positive_parts is not None:
            record["positive_parts"] = self.positive_parts
            record["negative_parts"] = self.negative_parts
        return record


@dataclass(frozen=True)
class TitleRow:
    query_id: str
    doc_id: str
    title_sum_a: float
    title_sum_b: float
    content_sum_a: float = 0.0
    content_sum_b: float = 0.0


@dataclass(frozen=True)
class TitleAttributionReport:
    rows: Tuple[TitleRow, ...]
    seed: int
    skipped: Tuple[str, ...] = ()

    def aggregate(self) -> Tuple[float, float]:
        """Sum of title sums per model."""
        return (float(sum(r.title_sum_a for r in self.rows)),
                float(sum(r.title_sum_b for r in self.rows)))

    def to_records(self, **extra: Any) -> List[Dict[str, Any]]:
        records = []
        for row in self.rows:
            record: Dict[str, Any] = dict(extra)
            record.update({
                "query_id": row.query_id,
                "doc_id": row.doc_id,
                "title_sum_a": row.title_sum_a,
                "title_sum_b": row.title_sum_b,
                "content_sum_a": row.content_sum_a,
                "content_sum_b": row.content_sum_b,
                "seed": self.seed,
            })
            records.append(record)
        return records


@dataclass(frozen=True)
class ModelComparison:
    ranking_a: RankingExplanation
    ranking_b: RankingExplanation
    delta: Dict[str, float] = field(default_factory=dict)


def tokenize_document(doc: Document, backend: EncoderBackend) -> TokenizedText:
    """Tokenize full_text() and mark the title tokens.

    The span covers the leading content tokens produced by tokenizing the title
    alone, clipped to what survives truncation.

    Raises:
        EncoderError: If the title tokens are not a prefix of the document tokens.
    """
    tok = backend.tokenize(doc.full_text(), role="document")
    if not doc.title:
        return tok

    title_tokens = list(backend.content_tokens(doc.title))
    positions = tok.content_positions()
    n = min(len(title_tokens), len(positions))
    if n == 0:
        return tok
    if [tok.tokens[p] for p in positions[:n]] != title_tokens[:n]:
        raise EncoderError(f"Title tokens of document {doc.doc_id} are not a prefix of its tokens")
    return tok.with_title_span((positions[0], positions[n - 1] + 1))


def explain_instance(query: Query, doc: Document, backend: EncoderBackend,
                     cfg: IGConfig = IGConfig(), workers: int = 1) -> InstanceExplanation:
    """Attribute one query-document score to both sides."""
    query_tok = backend.tokenize(query.text, role="query")
    doc_tok = tokenize_document(doc, backend)
    query_attr = attribute_side(query_tok, doc_tok, backend, "query", cfg, workers)
    doc_attr = attribute_side(query_tok, doc_tok, backend, "document", cfg, workers)
    log_message(
        f"Explained {query.query_id}/{doc.doc_id}: score={query_attr.score_f_x:.6f}, "
        f"residuals={query_attr.completeness_residual:.2e}/{doc_attr.completeness_residual:.2e}"
    )
    return InstanceExplanation(query.query_id, doc.doc_id, query_attr, doc_attr, query_attr.score_f_x)


def explain_ranking(query: Query, index: DenseIndex, backend: EncoderBackend,
                    corpus: Mapping[str, Document], k: int = DEFAULT_K_EXPLAIN,
                    cfg: IGConfig = IGConfig(), separate_signs: bool = False,
                    workers: int = 1) -> RankingExplanation:
    """Sum document-side token scores over the top-k retrieved documents.

    Documents are aggregated in ascending doc_id order, positions in token
    order. Positions the tokenizer marks special are left out on every
    backend; [UNK] is content and is kept.

    Raises:
        FingerprintMismatchError: If index was built by another backend.
        ExplainError: If a retrieved id is not in corpus or its attribution fails.
    """
    k = validate_positive_int(k, "k")
    index.check_backend(backend)
    query_tok = backend.tokenize(query.text, role="query")
    hits = retrieve(index, backend.encode_tokens(query_tok), k)

    def attribute(hit: Tuple[str, float]) -> Tuple[str, AttributionResult, TokenizedText]:
        doc_id = hit[0]
        doc = corpus.get(doc_id)
        if doc is None:
            raise ExplainError(f"Retrieved document {doc_id} is not in the corpus")
        try:
            doc_tok = tokenize_document(doc, backend)
            return doc_id, attribute_side(query_tok, doc_tok, backend, "document", cfg), doc_tok
        except DenseExplainException as e:
            raise ExplainError(f"Attribution failed for document {doc_id}: {e}")

    results = run_parallel(attribute, hits, workers if backend.thread_safe else 1)

    totals: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    positive: Dict[str, float] = {}
    negative: Dict[str, float] = {}
    for _, attr, doc_tok in sorted(results, key=lambda item: item[0]):
        seen: set[str] = set()
        for i in doc_tok.content_positions():
            token, value = attr.tokens[i], attr.token_scores[i]
            totals[token] = totals.get(token, 0.0) + value
            seen.add(token)
            if separate_signs:
                if value > 0:
                    positive[token] = positive.get(token, 0.0) + value
                elif value < 0:
                    negative[token] = negative.get(token, 0.0) + value
        for token in seen:
            counts[token] = counts.get(token, 0) + 1

    log_message(f"Ranking explanation for {query.query_id}: {len(results)} documents, {len(totals)} tokens")
    return RankingExplanation(
        query_id=query.query_id,
        k=k,
        per_token_totals=totals,
        contributing_docs=counts,
        documents=tuple(hits),
        positive_parts=positive if separate_signs else None,
        negative_parts=negative if separate_signs else None,
    )


def split_signed(re: RankingExplanation) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Positive map (total > 0) and negative map (|total| for total < 0).

    Explanations built with separate_signs split their accumulated parts instead.
    """
    if re.positive_parts is not None and re.negative_parts is not None:
        positive = {t: w for t, w in re.positive_parts.items() if w > 0}
        negative = {t: -w for t, w in re.negative_parts.items() if w < 0}
        return positive, negative
    positive = {t: w for t, w in re.per_token_totals.items() if w > 0}
    negative = {t: -w for t, w in re.per_token_totals.items() if w < 0}
    return positive, negative


def _content_sum(attr: AttributionResult, tok: TokenizedText) -> float:
    return float(np.sum([attr.token_scores[i] for i in tok.content_positions()]))


def title_attribution(queries: Sequence[Query], qrels: Qrels, corpus: Mapping[str, Document],
                      backend_a: EncoderBackend, backend_b: EncoderBackend,
                      cfg: IGConfig = IGConfig(), seed: int = 0, threshold: int = 1,
                      workers: int = 1) -> TitleAttributionReport:
    """Title attribution sums of one random relevant titled document per query, under two models.

    Selections are drawn in query order from ``numpy.random.default_rng(seed)``
    before any attribution runs; queries without an eligible document are skipped.

    Raises:
        ExplainError: If no query has a relevant document with a title.
    """
    rng = np.random.default_rng(seed)
    selections: List[Tuple[Query, Document]] = []
    skipped: List[str] = []
    for query in queries:
        candidates = [d for d in qrels.relevant(query.query_id, threshold)
                      if d in corpus and corpus[d].title]
        if not candidates:
            skipped.append(query.query_id)
            log_message(f"Title analysis skips {query.query_id}: no relevant titled document", "WARN")
            continue
        selections.append((query, corpus[candidates[int(rng.integers(len(candidates)))]]))

    if not selections:
        raise ExplainError("No query has a relevant document with a title")

    def sums(query: Query, doc: Document, backend: EncoderBackend) -> Tuple[float, float]:
        query_tok = backend.tokenize(query.text, role="query")
        doc_tok = tokenize_document(doc, backend)
        attr = attribute_side(query_tok, doc_tok, backend, "document", cfg)
        return attr.span_sum(doc_tok.title_span), _content_sum(attr, doc_tok)

    def row(selection: Tuple[Query, Document]) -> TitleRow:
        query, doc = selection
        try:
            title_a, content_a = sums(query, doc, backend_a)
            title_b, content_b = sums(query, doc, backend_b)
        except DenseExplainException as e:
            raise ExplainError(f"Title attribution failed for {query.query_id}/{doc.doc_id}: {e}")
        return TitleRow(query.query_id, doc.doc_id, title_a, title_b, content_a, content_b)

    parallel = backend_a.thread_safe and backend_b.thread_safe
    rows = run_parallel(row, selections, workers if parallel else 1)
    log_message(f"Title analysis: {len(rows)} rows, {len(skipped)} skipped, seed={seed}")
    return TitleAttributionReport(rows=tuple(rows), seed=seed, skipped=tuple(skipped))


def token_delta(totals_a: Mapping[str, float], totals_b: Mapping[str, float]) -> Dict[str, float]:
    """totals_b - totals_a over the union of tokens (missing counts as 0), sorted by token."""
    keys = sorted(set(totals_a) | set(totals_b))
    return {t: totals_b.get(t, 0.0) - totals_a.get(t, 0.0) for t in keys}


def compare_models(query: Query, corpus: Mapping[str, Document],
                   index_a: DenseIndex, backend_a: EncoderBackend,
                   index_b: DenseIndex, backend_b: EncoderBackend,
                   k: int = DEFAULT_K_EXPLAIN, cfg: IGConfig = IGConfig(),
                   separate_signs: bool = False, workers: int = 1) -> ModelComparison:
    """Ranking explanations of one query under two models and their per-token delta."""
    ranking_a = explain_ranking(query, index_a, backend_a, corpus, k, cfg, separate_signs, workers)
    ranking_b = explain_ranking(query, index_b, backend_b, corpus, k, cfg, separate_signs, workers)
    return ModelComparison(ranking_a, ranking_b, token_delta(ranking_a.per_token_totals, ranking_b.per_token_totals))
