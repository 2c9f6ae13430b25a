"""
Logging configuration for lastlab runs.

Provides:
- Rotating app.log / error.log inside the run directory
- Every record tagged with the running command and config hash
- Console output
- Incident tracking for non-fatal problems (written into run_meta.json)
"""

import sys
import logging
from collections import Counter
from pathlib import Path
from logging.handlers import RotatingFileHandler
from typing import Optional

DETAILED = "%(asctime)s - %(levelname)s - [%(run)s] %(name)s - %(funcName)s:%(lineno)d - %(message)s"
SIMPLE = "%(asctime)s - %(levelname)s - %(message)s"

QUIET_LOGGERS = ("matplotlib", "PIL")


class RunTagFilter(logging.Filter):
    """Stamp records with the run tag so interleaved logs can be told apart."""

    def __init__(self, run_tag: str):
        super().__init__()
        self.run_tag = run_tag

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = self.run_tag
        return True


def _rotating(path: Path, level: int, fmt: logging.Formatter, tag: RunTagFilter,
              max_bytes: int, backup_count: int) -> RotatingFileHandler:
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(fmt)
    handler.addFilter(tag)
    return handler


def setup_logging(
    log_dir: Optional[Path] = None,
    log_level: str = "INFO",
    run_tag: str = "-",
    max_bytes: int = 10 * 1024 * 1024,  # 10 MB per file
    backup_count: int = 5,
    console_output: bool = True,
) -> logging.Logger:
    """
    Configure logging for one command.

    Args:
        log_dir: Directory for app.log and error.log (defaults to <cwd>/logs)
        log_level: Minimum level for the root logger and console
        run_tag: Short label stamped on every file record, e.g. "sft:1a2b3c4d5e6f"
        max_bytes: Maximum size per log file before rotation
        backup_count: Number of rotated files to keep
        console_output: Whether to also log to stdout

    Returns:
        The configured root logger.
    """
    log_dir = Path(log_dir) if log_dir is not None else Path.cwd() / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)

    level = getattr(logging, log_level.upper(), logging.INFO)
    tag = RunTagFilter(run_tag)
    detailed = logging.Formatter(DETAILED, datefmt="%Y-%m-%d %H:%M:%S")

    root_logger = logging.getLogger()
    root_logger.setLevel(min(level, logging.DEBUG))

    # A process may run several commands (tests, ablation); drop the previous run's files
    for handler in list(root_logger.handlers):
        handler.close()
        root_logger.removeHandler(handler)

    root_logger.addHandler(_rotating(log_dir / "app.log", logging.DEBUG, detailed, tag, max_bytes, backup_count))
    root_logger.addHandler(_rotating(log_dir / "error.log", logging.ERROR, detailed, tag, max_bytes, backup_count))

    if console_output:
        console = logging.StreamHandler(sys.stdout)
        console.setLevel(level)
        console.setFormatter(logging.Formatter(SIMPLE, datefmt="%H:%M:%S"))
        root_logger.addHandler(console)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    root_logger.debug(f"Logging to {log_dir} at {log_level} ({run_tag})")
    return root_logger


class ErrorTracker:
    """
    Count non-fatal incidents: skipped GRPO updates, plan fallbacks, failed
    ablation arms. The summary goes into run_meta.json.
    """

    def __init__(self, max_errors: int = 100):
        self.errors = []
        self.max_errors = max_errors
        self.total_count = 0
        self.by_context = Counter()

    def record(self, error: Exception, context: Optional[str] = None):
        """Record an incident and log it at WARNING."""
        self.total_count += 1
        self.by_context[context or "-"] += 1
        self.errors.append({
            "type": type(error).__name__,
            "message": str(error),
            "context": context,
        })
        if len(self.errors) > self.max_errors:
            self.errors = self.errors[-self.max_errors:]
        logging.getLogger(__name__).warning(f"incident ({context or 'no context'}): {type(error).__name__}: {error}")

    def get_recent(self, count: int = 10):
        return self.errors[-count:]

    def get_summary(self) -> dict:
        """Totals by exception type and by context, plus the last few incidents."""
        return {
            "total": self.total_count,
            "by_type": dict(Counter(e["type"] for e in self.errors)),
            "by_context": dict(self.by_context),
            "last": self.get_recent(3),
        }

    def reset(self):
        self.errors = []
        self.total_count = 0
        self.by_context = Counter()


# Global incident tracker, reset at the start of every command
error_tracker = ErrorTracker()
