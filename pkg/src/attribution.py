"""Integrated gradients over token embeddings with a [PAD] baseline."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Optional, Protocol, Tuple

import numpy as np

from .encoder import PAD_TOKEN, EncoderBackend, TokenizedText, score
from .exceptions import (
    AttributionError, NonFiniteGradientError, UnsupportedCapabilityError, ValidationError,
)
from .utils import log_message, run_parallel


RULES = ("left-riemann", "right-riemann", "trapezoid", "gauss-legendre")
SIDES = ("query", "document")


@dataclass(frozen=True)
class IGConfig:
    """Step count, quadrature rule and completeness tolerance (rtol * |dF| + atol)."""

    steps: int = 128
    rule: str = "trapezoid"
    rtol: float = 1e-3
    atol: float = 1e-6

    def __post_init__(self) -> None:
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ValidationError(f"IG steps must be a positive integer, got: {self.steps}")
        if self.rule not in RULES:
            raise ValidationError(f"Invalid IG rule: {self.rule}. Must be one of: {', '.join(RULES)}")
        if self.rtol < 0 or self.atol < 0:
            raise ValidationError("IG tolerances must be non-negative")

    def tolerance(self, delta: float) -> float:
        return self.rtol * abs(delta) + self.atol


def quadrature(steps: int, rule: str) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolation points alpha in [0, 1] and their weights.

    left-riemann: alpha = k/m, k = 0..m-1; right-riemann: k = 1..m;
    trapezoid: k = 0..m with half weight at both ends;
    gauss-legendre: m Legendre nodes mapped from [-1, 1].
    """
    m = steps
    if rule == "left-riemann":
        return np.arange(m) / m, np.full(m, 1.0 / m)
    if rule == "right-riemann":
        return np.arange(1, m + 1) / m, np.full(m, 1.0 / m)
    if rule == "trapezoid":
        weights = np.full(m + 1, 1.0 / m)
        weights[0] = weights[-1] = 0.5 / m
        return np.arange(m + 1) / m, weights
    if rule == "gauss-legendre":
        nodes, weights = np.polynomial.legendre.leggauss(m)
        return (nodes + 1.0) / 2.0, weights / 2.0
    raise ValidationError(f"Invalid IG rule: {rule}")


class ScalarFunction(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class DifferentiableScalar:
    """A ScalarFunction from two callables."""

    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]

    def value(self, x: np.ndarray) -> float:
        return float(self.value_fn(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.gradient_fn(x), dtype=np.float64)


class EmbeddingScore:
    """F(e) = score of the pooled vector of e against a fixed vector of the other side.

    The query vector is always the left operand so both sides evaluate the
    same dot product.
    """

    def __init__(self, backend: EncoderBackend, tok: TokenizedText, fixed_vec: np.ndarray, side: str):
        self.backend = backend
        self.tok = tok
        self.fixed_vec = np.asarray(fixed_vec, dtype=np.float64)
        self.side = side

    def value(self, x: np.ndarray) -> float:
        pooled = self.backend.forward_pooled(x, self.tok)
        if self.side == "query":
            return score(pooled, self.fixed_vec)
        return score(self.fixed_vec, pooled)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.backend.gradient_wrt_embeddings(self.tok, x, self.fixed_vec)


@dataclass(frozen=True)
class IGDiagnostics:
    f_x: float
    f_baseline: float
    residual: float
    steps: int
    rule: str

    @property
    def delta(self) -> float:
        return self.f_x - self.f_baseline


def integrated_gradients(f: ScalarFunction, x: np.ndarray, x_base: np.ndarray,
                         cfg: IGConfig = IGConfig(), workers: int = 1) -> Tuple[np.ndarray, IGDiagnostics]:
    """Integrated gradients of f along the straight line from x_base to x.

    Gradient points may be evaluated concurrently; they are always summed in
    step order, so the result does not depend on ``workers``.

    Returns:
        (attribution matrix shaped like x, diagnostics with f(x), f(x_base) and
        the completeness residual |sum(attribution) - (f(x) - f(x_base))|).

    Raises:
        ValidationError: If x and x_base differ in shape.
        NonFiniteGradientError: If a gradient holds NaN or inf.
    """
    x = np.asarray(x, dtype=np.float64)
    x_base = np.asarray(x_base, dtype=np.float64)
    if x.shape != x_base.shape:
        raise ValidationError(f"Input shape {x.shape} does not match baseline shape {x_base.shape}")

    delta = x - x_base
    alphas, weights = quadrature(cfg.steps, cfg.rule)

    def gradient_at(step: int) -> np.ndarray:
        grad = np.asarray(f.gradient(x_base + alphas[step] * delta), dtype=np.float64)
        if grad.shape != x.shape:
            raise AttributionError(f"Gradient shape {grad.shape} at step {step} does not match input {x.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(step)
        return grad

    average = np.zeros_like(x)
    chunk = max(1, workers) * 4
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for start in range(0, len(alphas), chunk):
            steps = range(start, min(start + chunk, len(alphas)))
            for step, grad in zip(steps, run_parallel(gradient_at, steps, workers, pool=pool)):
                average += weights[step] * grad
    finally:
        if pool is not None:
            pool.shutdown()

    attribution = delta * average
    f_x = f.value(x)
    f_baseline = f.value(x_base)
    residual = abs(float(attribution.sum()) - (f_x - f_baseline))
    return attribution, IGDiagnostics(f_x, f_baseline, residual, cfg.steps, cfg.rule)


def reduce_to_tokens(attr: np.ndarray) -> np.ndarray:
    """Per-token score: sum of a row over embedding dimensions."""
    attr = np.asarray(attr, dtype=np.float64)
    if attr.ndim != 2:
        raise ValidationError(f"Attribution matrix must be 2-D, got shape {attr.shape}")
    return attr.sum(axis=1)


def pad_baseline(tok: TokenizedText, backend: EncoderBackend) -> TokenizedText:
    """Replace every non-special token with [PAD]; masks and title_span are kept.

    Raises:
        EncoderError: If the backend vocabulary has no [PAD] token.
    """
    pad_id = backend.pad_id
    ids = tuple(pad_id if not special else token_id
                for token_id, special in zip(tok.token_ids, tok.special_mask))
    tokens = tuple(PAD_TOKEN if not special else token
                   for token, special in zip(tok.tokens, tok.special_mask))
    return replace(tok, token_ids=ids, tokens=tokens)


@dataclass(frozen=True)
class AttributionResult:
    tokens: Tuple[str, ...]
    token_scores: Tuple[float, ...]
    score_f_x: float
    score_f_baseline: float
    completeness_residual: float
    side: str
    steps: int = 128
    rule: str = "trapezoid"
    title_span: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.token_scores):
            raise AttributionError(f"{len(self.token_scores)} scores for {len(self.tokens)} tokens")
        if self.side not in SIDES:
            raise AttributionError(f"Invalid side: {self.side}")

    @property
    def delta(self) -> float:
        return self.score_f_x - self.score_f_baseline

    def within_tolerance(self, cfg: IGConfig) -> bool:
        return self.completeness_residual <= cfg.tolerance(self.delta)

    def span_sum(self, span: Optional[Tuple[int, int]]) -> float:
        if span is None:
            return 0.0
        start, end = span
        return float(np.sum(self.token_scores[start:end]))

    def to_record(self, **extra: Any) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(extra)
        record.update({
            "side": self.side,
            "tokens": list(self.tokens),
            "token_scores": list(self.token_scores),
            "score_f_x": self.score_f_x,
            "score_f_baseline": self.score_f_baseline,
            "residual": self.completeness_residual,
            "steps": self.steps,
            "rule": self.rule,
            "title_span": list(self.title_span) if self.title_span else None,
        })
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "AttributionResult":
        span = record.get("title_span")
        return cls(
            tokens=tuple(record["tokens"]),
            token_scores=tuple(float(s) for s in record["token_scores"]),
            score_f_x=float(record["score_f_x"]),
            score_f_baseline=float(record["score_f_baseline"]),
            completeness_residual=float(record["residual"]),
            side=record["side"],
            steps=int(record.get("steps", 128)),
            rule=record.get("rule", "trapezoid"),
            title_span=tuple(span) if span else None,
        )


def attribute_side(query_tok: TokenizedText, doc_tok: TokenizedText, backend: EncoderBackend,
                   side: str, cfg: IGConfig = IGConfig(), workers: int = 1) -> AttributionResult:
    """Attribute the query-document score to the tokens of one side.

    The other side is encoded once and held fixed; the attributed side moves
    from its [PAD] baseline to its real embeddings.
    """
    if side not in SIDES:
        raise ValidationError(f"Invalid side: {side}. Must be one of: {', '.join(SIDES)}")
    if not backend.supports_gradients:
        raise UnsupportedCapabilityError(f"{type(backend).__name__} does not provide gradients")

    if side == "query":
        target, fixed = query_tok, backend.encode_tokens(doc_tok)
    else:
        target, fixed = doc_tok, backend.encode_tokens(query_tok)

    f = EmbeddingScore(backend, target, fixed, side)
    x = backend.embed(target)
    x_base = backend.embed(pad_baseline(target, backend))
    attr, diagnostics = integrated_gradients(f, x, x_base, cfg, workers=workers if backend.thread_safe else 1)
    token_scores = reduce_to_tokens(attr)

    result = AttributionResult(
        tokens=target.tokens,
        token_scores=tuple(float(s) for s in token_scores),
        score_f_x=diagnostics.f_x,
        score_f_baseline=diagnostics.f_baseline,
        completeness_residual=abs(float(np.sum(token_scores)) - diagnostics.delta),
        side=side,
        steps=cfg.steps,
        rule=cfg.rule,
        title_span=target.title_span,
    )
    if not result.within_tolerance(cfg):
        log_message(
            f"Completeness residual {result.completeness_residual:.3e} above tolerance "
            f"{cfg.tolerance(result.delta):.3e} ({side} side, m={cfg.steps}, {cfg.rule})", "WARN"
        )
    return result
