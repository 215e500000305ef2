"""Pre-computed document embeddings with exact top-k dot-product search."""

import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Document
from .encoder import EncoderBackend
from .exceptions import FingerprintMismatchError, IndexFileError, ValidationError
from .utils import log_message, run_parallel, validate_positive_int


MAGIC = b"DXINDEX\x00"
VERSION = 1
HEADER = struct.Struct("<8sIQIId")  # magic, version, N, d, fingerprint length, built_at
ID_LENGTH = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class DenseIndex:
    doc_ids: Tuple[str, ...]
    embeddings: np.ndarray
    model_fingerprint: str
    built_at: float = field(default_factory=time.time)

    def __post_init__(self) -> None:
        embeddings = np.array(self.embeddings, dtype=np.float64, copy=True)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(self.doc_ids):
            raise IndexFileError(f"Embeddings shape {embeddings.shape} does not match {len(self.doc_ids)} doc ids")
        embeddings.setflags(write=False)
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "_id_array", np.array(self.doc_ids, dtype=str))

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def check_backend(self, backend: EncoderBackend) -> None:
        """Raise FingerprintMismatchError unless backend built this index."""
        if backend.fingerprint != self.model_fingerprint:
            log_message(f"Fingerprint mismatch: index {self.model_fingerprint}, backend {backend.fingerprint}", "ERROR")
            raise FingerprintMismatchError(
                f"Index was built with {self.model_fingerprint}, active backend is {backend.fingerprint}"
            )


def build_index(corpus: Sequence[Document], backend: EncoderBackend, batch_size: int = 32,
                progress: Optional[Callable[[int, int], None]] = None, workers: int = 1) -> DenseIndex:
    """Encode every document's full_text() into a DenseIndex.

    Args:
        corpus: Documents in the order rows should appear.
        backend: Encoder used for every document.
        batch_size: Documents per batch.
        progress: Called with (documents done, total) after each batch.
        workers: Batches encoded concurrently when the backend is thread-safe.

    Raises:
        IndexFileError: On an empty corpus, duplicate ids or an encoding failure.
    """
    batch_size = validate_positive_int(batch_size, "batch_size")
    documents = list(corpus)
    if not documents:
        raise IndexFileError("Cannot build an index from an empty corpus")

    seen: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise IndexFileError(f"Duplicate doc_id in corpus: {doc.doc_id}")
        seen.add(doc.doc_id)

    batches = [documents[i:i + batch_size] for i in range(0, len(documents), batch_size)]
    total = len(documents)
    done = 0
    lock = threading.Lock()

    def encode_batch(batch: List[Document]) -> np.ndarray:
        rows = []
        for doc in batch:
            try:
                rows.append(backend.encode(doc.full_text(), role="document"))
            except Exception as e:
                raise IndexFileError(f"Failed to encode document {doc.doc_id}: {e}")
        return np.stack(rows)

    def run(batch: List[Document]) -> np.ndarray:
        nonlocal done
        rows = encode_batch(batch)
        with lock:
            done += len(batch)
            log_message(f"Indexed {done}/{total} documents", "DEBUG")
            if progress:
                progress(len(batch), total)
        return rows

    chunks = run_parallel(run, batches, workers if backend.thread_safe else 1)
    index = DenseIndex(
        doc_ids=tuple(doc.doc_id for doc in documents),
        embeddings=np.concatenate(chunks, axis=0),
        model_fingerprint=backend.fingerprint,
    )
    log_message(f"Index built: N={index.size}, d={index.dim}, fingerprint={index.model_fingerprint}")
    return index


def retrieve(index: DenseIndex, query_vec: np.ndarray, k: int) -> List[Tuple[str, float]]:
    """Exact top-k by dot product, ties broken by ascending doc_id.

    Returns:
        List of (doc_id, score), min(k, N) entries, scores non-increasing.

    Raises:
        ValidationError: If k < 1 or the query dimension differs from the index.
    """
    k = validate_positive_int(k, "k")
    query = np.asarray(query_vec, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValidationError(f"Query vector shape {query.shape} does not match index dim {index.dim}")

    scores = index.embeddings @ query
    order = np.lexsort((index._id_array, -scores))[:k]
    return [(index.doc_ids[i], float(scores[i])) for i in order]


def save_index(index: DenseIndex, path: Path) -> None:
    """Write header, doc_id table and row-major little-endian float64 rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fingerprint = index.model_fingerprint.encode("utf-8")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, index.size, index.dim, len(fingerprint), index.built_at))
        f.write(fingerprint)
        for doc_id in index.doc_ids:
            raw = doc_id.encode("utf-8")
            f.write(ID_LENGTH.pack(len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(index.embeddings, dtype="<f8").tobytes())
    log_message(f"Index saved to {path}")


def load_index(path: Path, backend: Optional[EncoderBackend] = None) -> DenseIndex:
    """Read an index file, checking the fingerprint against backend when given.

    Raises:
        IndexFileError: If the file is missing, truncated or not an index.
        FingerprintMismatchError: If backend did not build this index.
    """
    path = Path(path)
    if not path.exists():
        raise IndexFileError(f"Index file not found: {path}")
    data = path.read_bytes()

    def corrupt(reason: str) -> IndexFileError:
        return IndexFileError(f"Index file corrupted ({path}): {reason}")

    if len(data) < HEADER.size:
        raise corrupt("truncated header")
    magic, version, n, d, fp_len, built_at = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise corrupt("bad magic")
    if version != VERSION:
        raise corrupt(f"unsupported version {version}")

    offset = HEADER.size
    if offset + fp_len > len(data):
        raise corrupt("truncated fingerprint")
    try:
        fingerprint = data[offset:offset + fp_len].decode("utf-8")
        offset += fp_len
        doc_ids = []
        for _ in range(n):
            if offset + ID_LENGTH.size > len(data):
                raise corrupt("truncated doc_id table")
            (length,) = ID_LENGTH.unpack_from(data, offset)
            offset += ID_LENGTH.size
            if offset + length > len(data):
                raise corrupt("truncated doc_id table")
            doc_ids.append(data[offset:offset + length].decode("utf-8"))
            offset += length
    except UnicodeDecodeError:
        raise corrupt("invalid utf-8")

    expected = offset + 8 * n * d
    if len(data) != expected:
        raise corrupt(f"{len(data)} bytes, expected {expected}")
    embeddings = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset).reshape(n, d)

    index = DenseIndex(doc_ids=tuple(doc_ids), embeddings=embeddings,
                       model_fingerprint=fingerprint, built_at=built_at)
    if backend is not None:
        index.check_backend(backend)
    log_message(f"Index loaded from {path}: N={n}, d={d}")
    return index
