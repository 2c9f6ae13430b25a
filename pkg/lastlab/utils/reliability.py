"""
Reliability utilities for lastlab runs.

Provides:
- Exception hierarchy shared by every module
- Retry decorator with exponential backoff for artifact writes
- Error classification and CLI exit codes
"""

import time
import random
import logging
import functools
from typing import Callable, TypeVar, Tuple, Type, List, Optional

logger = logging.getLogger(__name__)

T = TypeVar("T")


class LastlabError(Exception):
    """Base class for all errors raised by lastlab."""


class ConfigError(LastlabError, ValueError):
    """Invalid run configuration. Carries one message per offending field."""

    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages) or "invalid configuration")


class ConfigurationError(LastlabError, ValueError):
    """Shapes or settings that do not fit together at call time."""


class RangeError(LastlabError, ValueError):
    """A time query outside the scene duration."""


class MissingCheckpointError(LastlabError, FileNotFoundError):
    """Checkpoint requested by a command does not exist."""


class ArtifactWriteError(LastlabError, OSError):
    """A run artifact could not be written after retries."""


class NonFiniteLossError(LastlabError, FloatingPointError):
    """Training produced a NaN/inf loss."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FormatError(LastlabError, ValueError):
    """Base for generated-sequence format failures. `code` tells them apart."""

    code = "format"


class EncodingError(FormatError):
    """Trajectory cannot be rendered (coordinate outside the vocabulary range)."""

    code = "encoding"


class TagError(FormatError):
    """Answer tags missing or out of order."""

    code = "tag"


class WaypointSyntaxError(FormatError):
    """Answer body does not match the waypoint grammar."""

    code = "syntax"


# Transient filesystem errors worth retrying
RETRYABLE_EXCEPTIONS: Tuple[Type[Exception], ...] = (
    BlockingIOError,
    InterruptedError,
    TimeoutError,
    PermissionError,
)


def backoff_delays(max_retries: int, base_delay: float, max_delay: float,
                   exponential_base: float, jitter: bool) -> List[float]:
    """Sleep before each retry: capped exponential, optionally scaled by U[0.5, 1.5)."""
    delays = [min(base_delay * exponential_base ** k, max_delay) for k in range(max_retries)]
    if jitter:
        delays = [d * (0.5 + _jitter_rng.random()) for d in delays]
    return delays


# Kept apart from the seeded global RNGs
_jitter_rng = random.Random()


def retry_with_backoff(
    max_retries: int = 3,
    base_delay: float = 0.2,
    max_delay: float = 5.0,
    exponential_base: float = 2.0,
    jitter: bool = True,
    retryable_exceptions: Optional[Tuple[Type[Exception], ...]] = None,
):
    """
    Retry an artifact write on transient filesystem errors.

    Any OSError that survives the retries (or is not retryable) is re-raised
    as ArtifactWriteError, so a failed checkpoint or log write aborts the
    command with one error type.

    Example:
        @retry_with_backoff(max_retries=3)
        def write_checkpoint(...):
            ...
    """
    retryable = retryable_exceptions or RETRYABLE_EXCEPTIONS

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> T:
            delays = backoff_delays(max_retries, base_delay, max_delay, exponential_base, jitter)
            for attempt, delay in enumerate(delays + [None], start=1):
                try:
                    return func(*args, **kwargs)
                except retryable as e:
                    if delay is None:
                        logger.error(f"{func.__name__}: giving up after {attempt} attempts: {e}")
                        raise ArtifactWriteError(f"{func.__name__} failed: {e}") from e
                    logger.warning(f"{func.__name__}: attempt {attempt} failed ({e}); retrying in {delay:.2f}s")
                    time.sleep(delay)
                except OSError as e:
                    logger.error(f"{func.__name__}: write failed: {e}")
                    raise ArtifactWriteError(f"{func.__name__} failed: {e}") from e

        return wrapper
    return decorator


def classify_error(exception: Exception) -> str:
    """
    Classify an error for logging and the CLI error record.

    Returns:
        Error category string
    """
    if isinstance(exception, ConfigError):
        return "config"
    elif isinstance(exception, MissingCheckpointError):
        return "missing_checkpoint"
    elif isinstance(exception, NonFiniteLossError):
        return "non_finite_loss"
    elif isinstance(exception, ArtifactWriteError):
        return "artifact_write"
    elif isinstance(exception, (ConfigurationError, RangeError)):
        return "configuration"
    elif isinstance(exception, FormatError):
        return exception.code
    elif isinstance(exception, OSError):
        return "io"
    else:
        return "unknown"


EXIT_CODES = {
    "config": 2,
    "missing_checkpoint": 3,
}


def exit_code_for(exception: Exception) -> int:
    """CLI exit status for an exception (1 unless the contract names one)."""
    return EXIT_CODES.get(classify_error(exception), 1)
