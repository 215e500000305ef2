"""Static artifacts: instance heatmaps, word-cloud weight files, title summaries and records."""

import html
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ReportError
from .explain import InstanceExplanation, RankingExplanation, TitleAttributionReport
from .evaluation import EvalComparison, EvalResult
from .utils import ensure_parent, format_score, log_message


POSITIVE_HUE = 120
NEGATIVE_HUE = 0
POLARITIES = ("positive", "negative")
RULE = "─" * 70


@dataclass(frozen=True)
class HeatmapDoc:
    query_segment: Tuple[Tuple[str, float], ...]
    document_segment: Tuple[Tuple[str, float], ...]
    score: float = 0.0
    query_residual: float = 0.0
    document_residual: float = 0.0
    title_span: Optional[Tuple[int, int]] = None


@dataclass(frozen=True)
class CloudWeights:
    """Strictly positive token weights, descending (ties by token)."""

    entries: Tuple[Tuple[str, float], ...]
    polarity: str
    query_id: str = ""
    k: int = 0

    def __post_init__(self) -> None:
        if self.polarity not in POLARITIES:
            raise ReportError(f"Invalid polarity: {self.polarity}")
        for token, weight in self.entries:
            if not weight > 0:
                raise ReportError(f"Cloud weight of {token!r} must be positive, got {weight}")

    @classmethod
    def from_mapping(cls, weights: Mapping[str, float], polarity: str,
                     query_id: str = "", k: int = 0) -> "CloudWeights":
        entries = sorted(weights.items(), key=lambda item: (-item[1], item[0]))
        return cls(tuple(entries), polarity, query_id, k)

    def as_dict(self) -> Dict[str, float]:
        """Frequencies dict for a word-cloud renderer."""
        return dict(self.entries)


def normalize(scores: Sequence[float]) -> Tuple[float, ...]:
    """Divide by the largest absolute score; an all-zero segment stays zero."""
    values = np.asarray(scores, dtype=np.float64)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak == 0.0:
        return tuple(0.0 for _ in values)
    return tuple(float(v) for v in values / peak)


def build_heatmap(ex: InstanceExplanation) -> HeatmapDoc:
    """Normalize the query and document segments independently."""
    q, d = ex.query_attr, ex.doc_attr
    return HeatmapDoc(
        query_segment=tuple(zip(q.tokens, normalize(q.token_scores))),
        document_segment=tuple(zip(d.tokens, normalize(d.token_scores))),
        score=ex.score,
        query_residual=q.completeness_residual,
        document_residual=d.completeness_residual,
        title_span=d.title_span,
    )


def intensity_color(intensity: float) -> str:
    """hsl() background, lightness falling linearly with |intensity|."""
    if intensity == 0:
        return "transparent"
    hue = POSITIVE_HUE if intensity > 0 else NEGATIVE_HUE
    lightness = 100 - 50 * min(abs(intensity), 1.0)
    return f"hsl({hue}, 75%, {lightness:.1f}%)"


def _segment_html(segment: Sequence[Tuple[str, float]], title_span: Optional[Tuple[int, int]] = None) -> str:
    parts = []
    for position, (token, intensity) in enumerate(segment):
        style = f"background-color: {intensity_color(intensity)}; padding: 1px 2px; margin: 1px; white-space: pre;"
        if title_span and title_span[0] <= position < title_span[1]:
            style += " text-decoration: underline;"
        parts.append(
            f'<span style="{style}" title="{intensity:+.4f}">{html.escape(token)}</span>'
        )
    return " ".join(parts)


def render_html(doc: HeatmapDoc, query_id: str = "", doc_id: str = "") -> str:
    return (
        "<!DOCTYPE html>\n"
        '<html><head><meta charset="utf-8">'
        f"<title>{html.escape(query_id)} / {html.escape(doc_id)}</title></head>\n"
        '<body style="font-family: monospace; line-height: 2;">\n'
        f"<h3>Query {html.escape(query_id)}</h3>\n"
        f"<div>{_segment_html(doc.query_segment)}</div>\n"
        f"<h3>Document {html.escape(doc_id)}</h3>\n"
        f"<div>{_segment_html(doc.document_segment, doc.title_span)}</div>\n"
        f"<footer><p>score: {doc.score:.6f}</p>"
        f"<p>residual (query): {doc.query_residual:.3e}</p>"
        f"<p>residual (document): {doc.document_residual:.3e}</p></footer>\n"
        "</body></html>\n"
    )


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        ensure_parent(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise ReportError(f"Cannot write {path}: {e}")
    return path


def render_instance(ex: InstanceExplanation, path: Path) -> Path:
    """Write a self-contained HTML heatmap of both segments.

    Raises:
        ReportError: If path is not writable.
    """
    path = _write_text(path, render_html(build_heatmap(ex), ex.query_id, ex.doc_id))
    log_message(f"Heatmap written to {path}")
    return path


def emit_cloud(weights: CloudWeights, path: Path) -> Path:
    """Write ``token<TAB>weight`` rows under a ``#`` metadata line.

    Raises:
        ReportError: If weights has no entries or path is not writable.
    """
    if not weights.entries:
        raise ReportError(f"No {weights.polarity} weights to write for query {weights.query_id}")
    lines = [f"# query_id={weights.query_id} k={weights.k} polarity={weights.polarity}"]
    lines.extend(f"{token}\t{weight!r}" for token, weight in weights.entries)
    path = _write_text(path, "\n".join(lines) + "\n")
    log_message(f"Cloud weights ({weights.polarity}, {len(weights.entries)} tokens) written to {path}")
    return path


def read_cloud(path: Path) -> CloudWeights:
    """Parse a file written by emit_cloud.

    Raises:
        ReportError: If the file is missing or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise ReportError(f"Cloud file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ReportError(f"Missing metadata header in {path}")
    meta = dict(part.split("=", 1) for part in lines[0][1:].split() if "=" in part)
    entries = []
    for number, line in enumerate(lines[1:], 2):
        token, sep, weight = line.rpartition("\t")
        if not sep:
            raise ReportError(f"Malformed row at line {number} of {path}")
        try:
            entries.append((token, float(weight)))
        except ValueError:
            raise ReportError(f"Malformed weight at line {number} of {path}")
    try:
        return CloudWeights(tuple(entries), meta.get("polarity", ""), meta.get("query_id", ""), int(meta.get("k", 0)))
    except ValueError:
        raise ReportError(f"Malformed metadata header in {path}")


def emit_title_summary(report: TitleAttributionReport, path: Path) -> Path:
    """Per-query title and content sums, then one ``TOTAL`` row of title sums per model.

    Raises:
        ReportError: If report has no rows or path is not writable.
    """
    if not report.rows:
        raise ReportError("Title summary needs at least one row")
    lines = [
        f"# seed={report.seed} rows={len(report.rows)} skipped={len(report.skipped)} "
        "columns=query_id,doc_id,title_sum_a,title_sum_b,content_sum_a,content_sum_b"
    ]
    for row in report.rows:
        lines.append("\t".join([row.query_id, row.doc_id, repr(row.title_sum_a), repr(row.title_sum_b),
                                repr(row.content_sum_a), repr(row.content_sum_b)]))
    total_a, total_b = report.aggregate()
    lines.append(f"TOTAL\t-\t{total_a!r}\t{total_b!r}\t-\t-")
    path = _write_text(path, "\n".join(lines) + "\n")
    log_message(f"Title summary ({len(report.rows)} rows) written to {path}")
    return path


def write_records(records: Iterable[Dict[str, Any]], path: Path) -> Path:
    """Write one JSON object per line with sorted keys."""
    text = "".join(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n" for record in records)
    return _write_text(path, text)


def read_records(path: Path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"Record file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ReportError(f"Malformed record at line {number} of {path}: {e.msg}")
    return records


def _two_columns(title: str, rows: Iterable[Tuple[str, str]]) -> str:
    lines = [title, RULE]
    lines.extend(f"{left:<40} {right:>20}" for left, right in rows)
    return "\n".join(lines)


def ranking_table(re: RankingExplanation, limit: int = 20) -> str:
    """Top tokens by absolute total, with the number of documents they occur in."""
    ranked = sorted(re.per_token_totals.items(), key=lambda item: (-abs(item[1]), item[0]))[:limit]
    lines = [f"Ranking explanation for {re.query_id} (k={re.k}, {len(re.documents)} documents)", RULE]
    lines.extend(f"{token:<40} {format_score(total):>20} {re.contributing_docs.get(token, 0):>6}"
                 for token, total in ranked)
    return "\n".join(lines)


def delta_table(delta: Mapping[str, float], limit: int = 20) -> str:
    ranked = sorted(delta.items(), key=lambda item: (-abs(item[1]), item[0]))[:limit]
    return _two_columns("Token delta (model b - model a)", ((t, format_score(v)) for t, v in ranked))


def eval_table(result: EvalResult) -> str:
    rows = [(query_id, f"{s:.4f}") for query_id, s in result.per_query.items()]
    rows.append((f"mean ({len(result.per_query)} queries)", f"{result.mean:.4f}"))
    if result.excluded:
        rows.append(("excluded (zero IDCG)", str(len(result.excluded))))
    return _two_columns(result.metric, rows)


def eval_comparison_table(comparison: EvalComparison) -> str:
    """Baseline, adapted, absolute and percentage columns for the mean and each query."""
    baseline, adapted = comparison.baseline, comparison.adapted
    header = f"{'':<24} {'Baseline':>10} {'Adapted':>10} {'Absolute':>10} {'Percentage':>11}"
    lines = [f"{baseline.metric} (a = baseline, b = adapted)", RULE, header]

    def row(label: str, a: float, b: float) -> str:
        pct = f"{100.0 * (b - a) / a:+.1f}%" if a else "n/a"
        return f"{label:<24} {a:>10.4f} {b:>10.4f} {b - a:>+10.4f} {pct:>11}"

    for query_id, a in baseline.per_query.items():
        lines.append(row(query_id, a, adapted.per_query[query_id]))
    lines.append(RULE)
    lines.append(row(f"mean ({len(baseline.per_query)} queries)", baseline.mean, adapted.mean))
    if baseline.excluded:
        lines.append(f"{'excluded (zero IDCG)':<24} {len(baseline.excluded):>10}")
    return "\n".join(lines)
