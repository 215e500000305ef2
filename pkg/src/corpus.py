"""BEIR-format corpus, query and qrels loading."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Tuple

from .exceptions import CorpusError
from .utils import log_message


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str

    def full_text(self) -> str:
        """Title first, single space, then body; body alone when untitled."""
        if self.title:
            return f"{self.title} {self.text}"
        return self.text

    def to_record(self) -> Dict[str, str]:
        return {"_id": self.doc_id, "title": self.title, "text": self.text}


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str

    def to_record(self) -> Dict[str, str]:
        return {"_id": self.query_id, "text": self.text}


@dataclass
class Qrels:
    """Graded judgments keyed by (query_id, doc_id), also indexed by query.

    Add judgments through ``add`` so the per-query index stays in step.
    """

    judgments: Dict[Tuple[str, str], int] = field(default_factory=dict)
    duplicate_count: int = 0
    _by_query: Dict[str, Dict[str, int]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for (query_id, doc_id), grade in self.judgments.items():
            self._by_query.setdefault(query_id, {})[doc_id] = grade

    def add(self, query_id: str, doc_id: str, grade: int) -> bool:
        """Record a judgment; returns True when it replaced an earlier one."""
        replaced = (query_id, doc_id) in self.judgments
        self.judgments[(query_id, doc_id)] = grade
        self._by_query.setdefault(query_id, {})[doc_id] = grade
        return replaced

    def grade(self, query_id: str, doc_id: str) -> int:
        """Relevance grade, 0 for unjudged pairs."""
        return self.judgments.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> Dict[str, int]:
        """All judged documents of one query."""
        return dict(self._by_query.get(query_id, {}))

    def relevant(self, query_id: str, threshold: int = 1) -> List[str]:
        """Doc ids with grade >= threshold, sorted."""
        return sorted(d for d, g in self.for_query(query_id).items() if g >= threshold)

    def query_ids(self) -> List[str]:
        return sorted(self._by_query)

    def __len__(self) -> int:
        return len(self.judgments)


def _read_jsonl(path: Path) -> Iterator[Tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed record in {path}: {e.msg}", line_number=number)
            if not isinstance(record, dict):
                raise CorpusError(f"record in {path} is not an object", line_number=number)
            yield number, record


def _field(record: dict, name: str, number: int, required: bool = True) -> str:
    if name not in record:
        if required:
            raise CorpusError(f"missing field '{name}'", line_number=number)
        return ""
    value = record[name]
    if value is None:
        return ""
    if not isinstance(value, (str, int, float)):
        raise CorpusError(f"field '{name}' must be a string", line_number=number)
    return str(value)


def load_corpus(path: Path) -> List[Document]:
    """Load a BEIR corpus.jsonl file.

    Args:
        path: Line-delimited records with ``_id``, ``title`` and ``text``.

    Returns:
        List[Document]: One document per line, in file order.

    Raises:
        CorpusError: On malformed lines, blank ids/text or duplicate ids.
    """
    documents: List[Document] = []
    seen: set[str] = set()
    for number, record in _read_jsonl(path):
        doc_id = _field(record, "_id", number).strip()
        if not doc_id:
            raise CorpusError("empty _id", line_number=number)
        title = _field(record, "title", number, required=False).strip()
        text = _field(record, "text", number).strip()
        if not text:
            raise CorpusError(f"blank text for document {doc_id}", line_number=number)
        if doc_id in seen:
            raise CorpusError(f"duplicate doc_id: {doc_id}", line_number=number)
        seen.add(doc_id)
        documents.append(Document(doc_id=doc_id, title=title, text=text))

    log_message(f"Loaded {len(documents)} documents from {path}")
    return documents


def load_queries(path: Path) -> List[Query]:
    """Load a BEIR queries.jsonl file.

    Raises:
        CorpusError: On malformed lines, blank text (naming the query id) or duplicate ids.
    """
    queries: List[Query] = []
    seen: set[str] = set()
    for number, record in _read_jsonl(path):
        query_id = _field(record, "_id", number).strip()
        if not query_id:
            raise CorpusError("empty _id", line_number=number)
        text = _field(record, "text", number).strip()
        if not text:
            raise CorpusError(f"blank text for query {query_id}", line_number=number)
        if query_id in seen:
            raise CorpusError(f"duplicate query_id: {query_id}", line_number=number)
        seen.add(query_id)
        queries.append(Query(query_id=query_id, text=text))

    log_message(f"Loaded {len(queries)} queries from {path}")
    return queries


def load_qrels(path: Path, queries: Iterable[Query] = ()) -> Qrels:
    """Load a BEIR qrels TSV (query-id, corpus-id, score).

    A header row is skipped. Duplicate (query, doc) pairs keep the last grade
    and are counted in ``duplicate_count``.

    Args:
        path: Tab-separated file.
        queries: When given, every judged query id must belong to this set.

    Raises:
        CorpusError: On short rows, non-integer or negative grades, unknown query ids.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"File not found: {path}")

    known = {q.query_id for q in queries}
    qrels = Qrels()
    with open(path, "r", encoding="utf-8", newline="") as f:
        for number, row in enumerate(csv.reader(f, delimiter="\t"), 1):
            if not row or not any(cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if len(cells) < 3:
                raise CorpusError(f"expected 3 columns, got {len(cells)}", line_number=number)
            query_id, doc_id, raw_grade = cells[0], cells[1], cells[2]
            if number == 1 and query_id.lower() in ("query-id", "query_id", "qid"):
                continue
            try:
                grade = int(raw_grade)
            except ValueError:
                raise CorpusError(f"non-integer grade: {raw_grade}", line_number=number)
            if grade < 0:
                raise CorpusError(f"negative grade: {grade}", line_number=number)
            if known and query_id not in known:
                raise CorpusError(f"unknown query_id: {query_id}", line_number=number)
            if qrels.add(query_id, doc_id, grade):
                qrels.duplicate_count += 1
                log_message(f"Duplicate qrels entry {query_id}/{doc_id} at row {number}, last value wins", "WARN")

    log_message(f"Loaded {len(qrels)} judgments from {path}")
    return qrels


def write_corpus(documents: Iterable[Document], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in documents:
            f.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")


def write_queries(queries: Iterable[Query], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for query in queries:
            f.write(json.dumps(query.to_record(), ensure_ascii=False) + "\n")


def write_qrels(qrels: Qrels, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["query-id", "corpus-id", "score"])
        for (query_id, doc_id), grade in qrels.judgments.items():
            writer.writerow([query_id, doc_id, grade])


def by_id(documents: Iterable[Document]) -> Mapping[str, Document]:
    return {doc.doc_id: doc for doc in documents}
