"""
Atomic artifact writes.

Features:
- Temp file + rename (no torn files on crash)
- Backup of the previous version
- Retry on transient filesystem errors
"""

import shutil
import logging
import threading
from pathlib import Path
from typing import Callable, Union

from lastlab.utils.reliability import retry_with_backoff

logger = logging.getLogger(__name__)

# One writer per process for run artifacts
_lock = threading.Lock()


def backup_path(path: Path) -> Path:
    return path.with_name(path.name + ".backup")


def _temp_path(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def _create_backup(path: Path) -> None:
    if path.exists():
        shutil.copy2(path, backup_path(path))
        logger.debug(f"Created backup of {path.name}")


@retry_with_backoff(max_retries=3)
def atomic_write(path: Union[str, Path], writer: Callable[[Path], None], backup: bool = True) -> Path:
    """
    Write a file atomically.

    `writer` receives a temporary path and must produce the full file there;
    the temp file then replaces `path`.

    Raises:
        ArtifactWriteError: the write failed after retries.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp = _temp_path(path)

    with _lock:
        try:
            writer(temp)
            if backup:
                _create_backup(path)
            temp.replace(path)
        finally:
            if temp.exists():
                try:
                    temp.unlink()
                except OSError:
                    pass

    logger.debug(f"Wrote {path}")
    return path


def atomic_write_text(path: Union[str, Path], text: str, backup: bool = True) -> Path:
    def _write(temp: Path) -> None:
        with open(temp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()

    return atomic_write(path, _write, backup=backup)
