"""Pretrained transformer backend (sentence-transformers style mean pooling).

Requires the ``external`` extra (torch, transformers). Imports are deferred so
the reference path never loads them.
"""

import hashlib
from typing import Any, Optional, Sequence

import numpy as np

from ..exceptions import EncoderError, UnsupportedCapabilityError
from ..utils import log_message
from .base import ROLES, EncoderBackend, TokenizedText


class TransformerBackend(EncoderBackend):
    """Adapter over a Hugging Face encoder fed through ``inputs_embeds``."""

    # One module instance shares autograd state; callers use one backend per worker.
    thread_safe = False

    def __init__(self, model_name: str, max_seq_len: int = 350, device: Optional[str] = None):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise UnsupportedCapabilityError(
                f"External backend needs torch and transformers (pip install 'DenseExplain-CLI[external]'): {e}"
            )

        self._torch = torch
        self.model_name = model_name
        self.max_seq_len = max_seq_len
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name).to(self.device).eval()
        except (OSError, ValueError) as e:
            raise EncoderError(f"Cannot load model {model_name}: {e}")
        for param in self.model.parameters():
            param.requires_grad_(False)
        self.embedding_dim = int(self.model.get_input_embeddings().weight.shape[1])
        self._fingerprint: Optional[str] = None
        log_message(f"Loaded external model {model_name} on {self.device}")

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            digest = hashlib.sha256()
            digest.update(f"{self.model_name}|{self.max_seq_len}".encode("utf-8"))
            digest.update(self.model.config.to_json_string().encode("utf-8"))
            weights = self.model.get_input_embeddings().weight.detach().double()
            digest.update(f"{float(weights.sum()):.12e}|{float(weights.abs().sum()):.12e}".encode("utf-8"))
            self._fingerprint = f"external:{digest.hexdigest()[:16]}"
        return self._fingerprint

    def token_to_id(self, token: str) -> Optional[int]:
        token_id = self.tokenizer.convert_tokens_to_ids(token)
        if token_id is None or token_id == self.tokenizer.unk_token_id and token != self.tokenizer.unk_token:
            return None
        return int(token_id)

    def tokenize(self, text: str, role: str = "document") -> TokenizedText:
        if role not in ROLES:
            raise EncoderError(f"Invalid role: {role}")
        enc = self.tokenizer(
            text,
            truncation=True,
            max_length=self.max_seq_len,
            return_special_tokens_mask=True,
            return_attention_mask=True,
        )
        ids = list(enc["input_ids"])
        special = [bool(s) for s in enc["special_tokens_mask"]]
        if all(special):
            raise EncoderError(f"Text has no content tokens: {text!r}")
        return TokenizedText(
            token_ids=tuple(ids),
            tokens=tuple(self.tokenizer.convert_ids_to_tokens(ids)),
            special_mask=tuple(special),
            attention_mask=tuple(bool(a) for a in enc["attention_mask"]),
            role=role,
        )

    def content_tokens(self, text: str) -> Sequence[str]:
        """Content tokens of text without specials, used for title-span alignment."""
        return self.tokenizer.tokenize(text)

    def embed(self, tok: TokenizedText) -> np.ndarray:
        torch = self._torch
        vocab_size = self.model.get_input_embeddings().weight.shape[0]
        if min(tok.token_ids) < 0 or max(tok.token_ids) >= vocab_size:
            raise EncoderError("Token ids outside vocabulary")
        ids = torch.tensor([tok.token_ids], device=self.device)
        with torch.no_grad():
            rows = self.model.get_input_embeddings()(ids)[0]
        return rows.double().cpu().numpy()

    def _pooled_tensor(self, x_tensor: Any, tok: TokenizedText) -> Any:
        torch = self._torch
        attention = torch.tensor([tok.attention_mask], dtype=torch.long, device=self.device)
        dtype = self.model.get_input_embeddings().weight.dtype
        hidden = self.model(inputs_embeds=x_tensor.to(dtype)[None], attention_mask=attention).last_hidden_state[0]
        mask = torch.tensor(tok.pooling_mask(), device=self.device)
        count = int(mask.sum())
        if count == 0:
            raise EncoderError("No poolable tokens (all positions special or masked)")
        return hidden[mask].double().sum(dim=0) / count

    def forward_pooled(self, x: np.ndarray, tok: TokenizedText) -> np.ndarray:
        torch = self._torch
        x = self.check_input(x, tok)
        with torch.no_grad():
            pooled = self._pooled_tensor(torch.tensor(x, device=self.device), tok)
        return pooled.cpu().numpy()

    def gradient_wrt_embeddings(self, tok: TokenizedText, x: np.ndarray, fixed_vec: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = self.check_input(x, tok)
        fixed = torch.tensor(np.asarray(fixed_vec, dtype=np.float64), device=self.device)
        x_tensor = torch.tensor(x, device=self.device, requires_grad=True)
        with torch.enable_grad():
            value = torch.dot(self._pooled_tensor(x_tensor, tok), fixed)
            (grad,) = torch.autograd.grad(value, x_tensor)
        return grad.detach().cpu().numpy()
