"""Encoder backends and the factory that picks one from configuration."""

from pathlib import Path
from typing import Iterable, Optional

from ..exceptions import ConfigError
from ..utils import log_message
from .base import (
    CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN,
    EncoderBackend, TokenizedText, mean_pool, score,
)
from .reference import ReferenceEncoder, Vocabulary, basic_tokenize, build_vocabulary


def create_backend(spec, run_seed: int, texts: Optional[Iterable[str]] = None) -> EncoderBackend:
    """Build the backend a BackendSpec describes.

    Args:
        spec: BackendSpec from the run configuration.
        run_seed: Global seed; the encoder seed derives from it unless set.
        texts: Corpus and query texts for the reference vocabulary.

    Returns:
        EncoderBackend: ReferenceEncoder or TransformerBackend.

    Raises:
        ConfigError: If a reference backend has neither a parameter file nor texts.
    """
    if spec.kind == "external":
        from .external import TransformerBackend
        return TransformerBackend(spec.model, max_seq_len=spec.max_seq_len)

    if spec.params_path and Path(spec.params_path).exists():
        encoder = ReferenceEncoder.load(Path(spec.params_path))
        if encoder.max_seq_len != spec.max_seq_len or encoder.embedding_dim != spec.embedding_dim:
            log_message(
                f"Encoder file {spec.params_path} overrides configured dims "
                f"(d={encoder.embedding_dim}, max_seq_len={encoder.max_seq_len})", "WARN"
            )
        return encoder

    if texts is None:
        raise ConfigError("Reference backend needs backend.params_path or corpus texts to build a vocabulary")

    seed = spec.resolved_seed(run_seed)
    encoder = ReferenceEncoder.create(
        build_vocabulary(texts),
        embedding_dim=spec.embedding_dim,
        max_seq_len=spec.max_seq_len,
        seed=seed,
    )
    log_message(f"Reference encoder created (|V|={len(encoder.vocabulary)}, d={encoder.embedding_dim}, seed={seed})")
    return encoder


__all__ = [
    "CLS_TOKEN", "PAD_TOKEN", "SEP_TOKEN", "UNK_TOKEN",
    "EncoderBackend", "ReferenceEncoder", "TokenizedText", "Vocabulary",
    "basic_tokenize", "build_vocabulary", "create_backend", "mean_pool", "score",
]
