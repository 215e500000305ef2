"""Utility functions for DenseExplain-CLI."""

import hashlib
import logging
import os
from concurrent.futures import Executor, ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar
from .exceptions import ValidationError


T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT: str = "[%(asctime)s] [%(levelname)s] %(message)s"
LOG_DATE_FORMAT: str = "%Y-%m-%d %H:%M:%S"

_LEVELS: Dict[str, int] = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARN": logging.WARNING,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}

logger = logging.getLogger("dexplain")
logger.propagate = False


def get_app_dir() -> Path:
    """Get the DenseExplain home directory.

    Returns:
        Path: ``$DEXPLAIN_HOME`` when set, else ``~/.dexplain``.
    """
    override = os.environ.get("DEXPLAIN_HOME")
    return Path(override) if override else Path.home() / ".dexplain"


def ensure_app_dir() -> Path:
    """Create the DenseExplain home directory if not exists.

    Returns:
        Path: The home directory.
    """
    app_dir = get_app_dir()
    app_dir.mkdir(parents=True, exist_ok=True)
    return app_dir


def get_log_path() -> Path:
    """Get path to logs.log.

    Returns:
        Path: Full path to log file.
    """
    return ensure_app_dir() / "logs.log"


def _handler_for(path: Path) -> logging.Handler:
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == path.resolve():
            return handler
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)
    return handler


def log_message(message: str, level: str = "INFO") -> None:
    """Log message to file with timestamp.

    Args:
        message: The message to log.
        level: Log level (INFO, WARN, ERROR, DEBUG).
    """
    try:
        _handler_for(get_log_path())
    except OSError:
        return
    logger.log(_LEVELS.get(level.upper(), logging.INFO), message)


def dict_merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    """Deep merge two dictionaries (updates override base).

    Args:
        base: Base dictionary to merge into.
        updates: Dictionary with updates/overrides.

    Returns:
        Dict: Merged dictionary with updates applied recursively.
    """
    result: Dict[str, Any] = base.copy()
    for key, value in updates.items():
        if isinstance(value, dict) and key in result and isinstance(result[key], dict):
            result[key] = dict_merge(result[key], value)
        else:
            result[key] = value
    return result


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a per-purpose seed from the global seed.

    Args:
        seed: Global run seed.
        purpose: Purpose tag, e.g. ``encoder`` or ``title-sampling``.

    Returns:
        int: First 8 bytes of SHA-256 over ``"{seed}:{purpose}"``, masked to 63 bits.
    """
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def validate_positive_int(value: Any, name: str) -> int:
    """Validate and return a positive integer.

    Args:
        value: Value to validate.
        name: Parameter name used in the error message.

    Returns:
        int: Validated integer.

    Raises:
        ValidationError: If value is not an integer >= 1.
    """
    if isinstance(value, bool):
        raise ValidationError(f"{name} must be a positive integer, got: {value}")
    try:
        number = int(value)
    except (ValueError, TypeError):
        raise ValidationError(f"{name} must be a positive integer, got: {value}")
    if number != value and not isinstance(value, str):
        raise ValidationError(f"{name} must be a positive integer, got: {value}")
    if number < 1:
        raise ValidationError(f"{name} must be >= 1, got: {number}")
    return number


def run_parallel(fn: Callable[[T], R], items: Iterable[T], workers: int = 1,
                 pool: Optional[Executor] = None) -> List[R]:
    """Map fn over items, optionally on a thread pool.

    Results are returned in input order regardless of completion order.

    Args:
        fn: Function applied to every item.
        items: Inputs.
        workers: Maximum worker threads; 1 runs inline.
        pool: Executor to reuse across calls; a fresh one is created when None.

    Returns:
        List: fn(item) for every item, in input order.
    """
    materialized = list(items)
    if workers <= 1 or len(materialized) <= 1:
        return [fn(item) for item in materialized]
    if pool is not None:
        return list(pool.map(fn, materialized))
    with ThreadPoolExecutor(max_workers=workers) as fresh:
        return list(fresh.map(fn, materialized))


def format_score(value: float, digits: int = 6) -> str:
    """Format a score with a fixed number of decimals.

    Args:
        value: Score to format.
        digits: Decimals to keep.

    Returns:
        str: Signed fixed-point string (e.g. "+0.125000").
    """
    return f"{value:+.{digits}f}"


def ensure_parent(path: Optional[Path]) -> None:
    """Create the parent directory of path if needed."""
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
