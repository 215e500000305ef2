"""Seeded tanh encoder with hand-derived gradients.

Position t of the forward pass is ``tanh(W (E[token_t] + P[t]) + b)`` and the
text vector is the mean over non-special positions. Parameters are drawn
uniformly from [-0.5, 0.5] by ``numpy.random.default_rng(seed)`` in the order
E, P, W, b.
"""

import hashlib
import re
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..exceptions import EncoderError
from ..utils import log_message
from .base import (
    CLS_TOKEN, PAD_TOKEN, ROLES, SEP_TOKEN, UNK_TOKEN,
    EncoderBackend, TokenizedText, mean_pool,
)


SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)
TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

MAGIC = b"DXREFENC"
VERSION = 1
HEADER = struct.Struct("<8sIIIIQ")  # magic, version, |V|, d, max_seq_len, seed
INIT_RANGE = 0.5


def basic_tokenize(text: str) -> List[str]:
    """Lowercase split into word runs and single punctuation marks."""
    return TOKEN_PATTERN.findall(text.lower())


class Vocabulary:
    """Token string <-> id table with the four special tokens first."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise EncoderError(f"Vocabulary must start with {', '.join(SPECIAL_TOKENS)}")
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if token in self.index:
                raise EncoderError(f"Duplicate vocabulary token: {token}")
            self.index[token] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def get(self, token: str) -> Optional[int]:
        return self.index.get(token)

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.index[UNK_TOKEN])

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path: Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise EncoderError(f"Vocabulary file not found: {path}")
        lines = path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocabulary(texts: Iterable[str]) -> Vocabulary:
    """Specials, then every token of texts in sorted order."""
    seen: set[str] = set()
    for text in texts:
        seen.update(basic_tokenize(text))
    seen.difference_update(SPECIAL_TOKENS)
    return Vocabulary(list(SPECIAL_TOKENS) + sorted(seen))


class ReferenceEncoder(EncoderBackend):
    """Desk-scale encoder whose gradients have a closed form."""

    thread_safe = True

    def __init__(self, vocabulary: Vocabulary, E: np.ndarray, P: np.ndarray,
                 W: np.ndarray, b: np.ndarray, seed: int = 0):
        self.vocabulary = vocabulary
        self.seed = int(seed)
        self.E = self._frozen(E, (len(vocabulary), None), "E")
        d = self.E.shape[1]
        self.P = self._frozen(P, (None, d), "P")
        self.W = self._frozen(W, (d, d), "W")
        self.b = self._frozen(b, (d,), "b")
        self.embedding_dim = d
        self.max_seq_len = self.P.shape[0]
        if self.max_seq_len < 3:
            raise EncoderError("max_seq_len must be at least 3")
        self._fingerprint: Optional[str] = None

    @staticmethod
    def _frozen(array: np.ndarray, shape: tuple, name: str) -> np.ndarray:
        out = np.array(array, dtype=np.float64, copy=True)
        if out.ndim != len(shape) or any(want is not None and got != want for got, want in zip(out.shape, shape)):
            raise EncoderError(f"Parameter {name} has shape {out.shape}, expected {shape}")
        out.setflags(write=False)
        return out

    @classmethod
    def create(cls, vocabulary: Vocabulary, embedding_dim: int = 32,
               max_seq_len: int = 350, seed: int = 0) -> "ReferenceEncoder":
        """Draw E, P, W, b uniformly from [-0.5, 0.5] with a seeded generator."""
        rng = np.random.default_rng(seed)
        V, d = len(vocabulary), embedding_dim
        E = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(V, d))
        P = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(max_seq_len, d))
        W = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(d, d))
        b = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(d,))
        return cls(vocabulary, E, P, W, b, seed=seed)

    # ========== CONTRACT ==========

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            digest = hashlib.sha256()
            digest.update(self._header())
            for array in (self.E, self.P, self.W, self.b):
                digest.update(array.astype("<f8").tobytes())
            digest.update("\n".join(self.vocabulary.tokens).encode("utf-8"))
            self._fingerprint = f"reference:{digest.hexdigest()[:16]}"
        return self._fingerprint

    def token_to_id(self, token: str) -> Optional[int]:
        return self.vocabulary.get(token)

    def tokenize(self, text: str, role: str = "document") -> TokenizedText:
        if role not in ROLES:
            raise EncoderError(f"Invalid role: {role}")
        words = basic_tokenize(text or "")
        if not words:
            raise EncoderError(f"Text has no content tokens: {text!r}")
        words = words[: self.max_seq_len - 2]
        ids = [self.vocabulary.index[CLS_TOKEN]]
        ids.extend(self.vocabulary.id_of(w) for w in words)
        ids.append(self.vocabulary.index[SEP_TOKEN])
        length = len(ids)
        return TokenizedText(
            token_ids=tuple(ids),
            tokens=tuple(self.vocabulary.token_of(i) for i in ids),
            special_mask=tuple(i == 0 or i == length - 1 for i in range(length)),
            attention_mask=(True,) * length,
            role=role,
        )

    def embed(self, tok: TokenizedText) -> np.ndarray:
        ids = np.asarray(tok.token_ids, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= len(self.vocabulary):
            bad = [int(i) for i in ids if i < 0 or i >= len(self.vocabulary)]
            raise EncoderError(f"Token ids outside vocabulary: {bad}")
        if len(ids) > self.max_seq_len:
            raise EncoderError(f"Sequence length {len(ids)} exceeds max_seq_len {self.max_seq_len}")
        return self.E[ids] + self.P[: len(ids)]

    def forward_outputs(self, x: np.ndarray, tok: TokenizedText) -> np.ndarray:
        """Per-position outputs tanh(x W^T + b)."""
        x = self.check_input(x, tok)
        return np.tanh(x @ self.W.T + self.b)

    def forward_pooled(self, x: np.ndarray, tok: TokenizedText) -> np.ndarray:
        return mean_pool(self.forward_outputs(x, tok), tok)

    def gradient_wrt_embeddings(self, tok: TokenizedText, x: np.ndarray, fixed_vec: np.ndarray) -> np.ndarray:
        fixed = np.asarray(fixed_vec, dtype=np.float64)
        if fixed.shape != (self.embedding_dim,):
            raise EncoderError(f"fixed_vec has shape {fixed.shape}, expected ({self.embedding_dim},)")
        mask = tok.pooling_mask()
        count = int(mask.sum())
        if count == 0:
            raise EncoderError("No poolable tokens (all positions special or masked)")
        outputs = self.forward_outputs(x, tok)
        upstream = (1.0 - outputs ** 2) * fixed
        upstream[~mask] = 0.0
        return (upstream @ self.W) / count

    # ========== PERSISTENCE ==========

    def _header(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, len(self.vocabulary), self.embedding_dim,
                           self.max_seq_len, self.seed & ((1 << 64) - 1))

    def save(self, path: Path) -> None:
        """Write header + row-major little-endian float64 E, P, W, b; vocabulary to ``<path>.vocab``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(self._header())
            for array in (self.E, self.P, self.W, self.b):
                f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
        self.vocabulary.save(vocab_path(path))
        log_message(f"Encoder parameters saved to {path} ({self.fingerprint})")

    @classmethod
    def load(cls, path: Path) -> "ReferenceEncoder":
        """Read a parameter file written by save.

        Raises:
            EncoderError: On missing, truncated or inconsistent files.
        """
        path = Path(path)
        if not path.exists():
            raise EncoderError(f"Encoder file not found: {path}")
        data = path.read_bytes()
        if len(data) < HEADER.size:
            raise EncoderError(f"Encoder file truncated: {path}")
        magic, version, V, d, max_seq_len, seed = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise EncoderError(f"Not an encoder parameter file: {path}")
        if version != VERSION:
            raise EncoderError(f"Unsupported encoder file version {version}: {path}")

        sizes = [V * d, max_seq_len * d, d * d, d]
        expected = HEADER.size + 8 * sum(sizes)
        if len(data) != expected:
            raise EncoderError(f"Encoder file corrupted: {path} has {len(data)} bytes, expected {expected}")

        arrays = []
        offset = HEADER.size
        for count in sizes:
            arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset))
            offset += 8 * count
        vocabulary = Vocabulary.load(vocab_path(path))
        if len(vocabulary) != V:
            raise EncoderError(f"Vocabulary size {len(vocabulary)} does not match header {V}")
        E, P, W, b = arrays
        return cls(vocabulary, E.reshape(V, d), P.reshape(max_seq_len, d), W.reshape(d, d), b, seed=seed)


def vocab_path(path: Path) -> Path:
    return Path(str(path) + ".vocab")
