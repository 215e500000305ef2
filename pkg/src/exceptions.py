"""Custom exceptions for DenseExplain-CLI."""

from typing import Optional


class DenseExplainException(Exception):
    """Base exception for all DenseExplain errors."""
    pass


class ConfigError(DenseExplainException):
    """Raised when config loading or overrides fail."""
    pass


class ValidationError(DenseExplainException):
    """Raised when an argument violates a precondition (k, shapes, empty input)."""
    pass


class CorpusError(DenseExplainException):
    """Raised when corpus, query or qrels files are malformed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EncoderError(DenseExplainException):
    """Raised when tokenization, embedding or pooling fails."""
    pass


class UnsupportedCapabilityError(EncoderError):
    """Raised when a backend cannot provide a requested capability (gradients)."""
    pass


class IndexFileError(DenseExplainException):
    """Raised when building, saving or loading a dense index fails."""
    pass


class FingerprintMismatchError(IndexFileError):
    """Raised when an index was built with a different model than the active one."""
    pass


class AttributionError(DenseExplainException):
    """Raised when integrated gradients cannot be computed."""
    pass


class NonFiniteGradientError(AttributionError):
    """Raised when a gradient evaluation returns NaN or inf."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"Non-finite gradient at interpolation step {step}")


class ExplainError(DenseExplainException):
    """Raised when an explanation cannot be produced (unknown ids, no eligible docs)."""
    pass


class EvaluationError(DenseExplainException):
    """Raised when a run cannot be evaluated."""
    pass


class ReportError(DenseExplainException):
    """Raised when a report artifact cannot be written."""
    pass
