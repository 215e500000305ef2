"""Differentiable encoding contract shared by every backend."""

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import EncoderError, UnsupportedCapabilityError, ValidationError


PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"

ROLES = ("query", "document")


@dataclass(frozen=True)
class TokenizedText:
    """Token ids and aligned masks of one encoder input.

    ``title_span`` is a half-open ``(start, end)`` interval of token positions.
    """

    token_ids: Tuple[int, ...]
    tokens: Tuple[str, ...]
    special_mask: Tuple[bool, ...]
    attention_mask: Tuple[bool, ...]
    title_span: Optional[Tuple[int, int]] = None
    role: str = "document"

    def __post_init__(self) -> None:
        length = len(self.token_ids)
        if length < 1:
            raise EncoderError("TokenizedText must hold at least one token")
        for name in ("tokens", "special_mask", "attention_mask"):
            if len(getattr(self, name)) != length:
                raise EncoderError(f"{name} has length {len(getattr(self, name))}, expected {length}")
        if self.role not in ROLES:
            raise EncoderError(f"Invalid role: {self.role}")
        if self.title_span is not None:
            start, end = self.title_span
            if not (1 <= start < end <= length - 1):
                raise EncoderError(f"title_span {self.title_span} outside [1, {length - 1}]")
            if any(self.special_mask[start:end]):
                raise EncoderError(f"title_span {self.title_span} covers special tokens")

    def __len__(self) -> int:
        return len(self.token_ids)

    def with_title_span(self, span: Optional[Tuple[int, int]]) -> "TokenizedText":
        return replace(self, title_span=span)

    def pooling_mask(self) -> np.ndarray:
        """Positions averaged by mean pooling: attended and not special."""
        special = np.asarray(self.special_mask, dtype=bool)
        attended = np.asarray(self.attention_mask, dtype=bool)
        return attended & ~special

    def content_positions(self) -> List[int]:
        return [i for i, special in enumerate(self.special_mask) if not special]


def mean_pool(outputs: np.ndarray, tok: TokenizedText) -> np.ndarray:
    """Average per-position outputs over non-special attended positions.

    Raises:
        EncoderError: If no position is poolable.
    """
    mask = tok.pooling_mask()
    count = int(mask.sum())
    if count == 0:
        raise EncoderError("No poolable tokens (all positions special or masked)")
    return outputs[mask].sum(axis=0) / count


def score(q_vec: np.ndarray, d_vec: np.ndarray) -> float:
    """Dot-product relevance of a query and a document vector.

    Raises:
        ValidationError: On dimension mismatch.
    """
    q = np.asarray(q_vec, dtype=np.float64)
    d = np.asarray(d_vec, dtype=np.float64)
    if q.ndim != 1 or q.shape != d.shape:
        raise ValidationError(f"Dimension mismatch: {q.shape} vs {d.shape}")
    return float(np.dot(q, d))


class EncoderBackend(ABC):
    """A differentiable map from token embeddings to a pooled vector.

    Backends are immutable after construction. ``thread_safe`` declares whether
    forward and gradient calls may run concurrently on one instance.
    """

    thread_safe: bool = True
    supports_gradients: bool = True

    embedding_dim: int
    max_seq_len: int

    @property
    @abstractmethod
    def fingerprint(self) -> str:
        """Stable identifier of the model weights and tokenizer."""

    @abstractmethod
    def token_to_id(self, token: str) -> Optional[int]:
        """Vocabulary id of a token string, or None."""

    @abstractmethod
    def tokenize(self, text: str, role: str = "document") -> TokenizedText:
        """[CLS] + content (truncated) + [SEP]."""

    @abstractmethod
    def embed(self, tok: TokenizedText) -> np.ndarray:
        """Input embedding rows (L x d)."""

    @abstractmethod
    def forward_pooled(self, x: np.ndarray, tok: TokenizedText) -> np.ndarray:
        """Pooled vector (d) from input embeddings."""

    def gradient_wrt_embeddings(self, tok: TokenizedText, x: np.ndarray, fixed_vec: np.ndarray) -> np.ndarray:
        """dF/dx for F(x) = score(forward_pooled(x, tok), fixed_vec)."""
        raise UnsupportedCapabilityError(f"{type(self).__name__} does not provide gradients")

    @property
    def pad_id(self) -> int:
        pad = self.token_to_id(PAD_TOKEN)
        if pad is None:
            raise EncoderError("Vocabulary has no [PAD] token")
        return pad

    def content_tokens(self, text: str) -> Sequence[str]:
        """Token strings of text without the special tokens."""
        tok = self.tokenize(text)
        return [tok.tokens[i] for i in tok.content_positions()]

    def encode_tokens(self, tok: TokenizedText) -> np.ndarray:
        return self.forward_pooled(self.embed(tok), tok)

    def encode(self, text: str, role: str = "document") -> np.ndarray:
        """pool(forward(embed(tokenize(text))))."""
        return self.encode_tokens(self.tokenize(text, role))

    def check_input(self, x: np.ndarray, tok: TokenizedText) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (len(tok), self.embedding_dim):
            raise ValidationError(f"Embedding shape {x.shape} does not match ({len(tok)}, {self.embedding_dim})")
        return x
