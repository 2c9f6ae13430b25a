"""
Run logs and metadata.

CSV logs open with a '# format=... config_hash=...' comment line and never
contain timestamps, so reruns under the same config are byte-identical.
Wall-clock times and the environment fingerprint go to run_meta.json.
"""

import csv
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional, Sequence

import psutil

from lastlab.config.settings import LOG_FORMAT
from lastlab.store.atomic import atomic_write_text

logger = logging.getLogger(__name__)


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvLog:
    """Append-only CSV log with a comment header."""

    def __init__(self, path: Path, columns: Sequence[str], config_hash: str,
                 fmt: str = LOG_FORMAT, extra_header: Optional[Dict[str, str]] = None):
        self.path = Path(path)
        self.columns = list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        header = {"format": fmt, "config_hash": config_hash}
        header.update(extra_header or {})
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            f.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
            csv.writer(f, lineterminator="\n").writerow(self.columns)

    def append(self, row: Dict[str, object]) -> None:
        with open(self.path, "a", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([_cell(row.get(c, "")) for c in self.columns])


def read_csv_log(path: Path) -> tuple:
    """Returns (header dict, list of row dicts with string values)."""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        header = {}
        if first.startswith("#"):
            for item in first[1:].split():
                if "=" in item:
                    key, value = item.split("=", 1)
                    header[key] = value
        else:
            f.seek(0)
        rows = list(csv.DictReader(f))
    return header, rows


def environment_fingerprint() -> dict:
    import numpy
    import torch

    memory = psutil.virtual_memory()
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_gb": round(memory.total / 1024 ** 3, 1),
    }


def write_run_meta(run_dir: Path, command: str, config_hash: str, status: str,
                   started: datetime, extra: Optional[dict] = None) -> Path:
    """Record timing, status and environment for one command."""
    path = Path(run_dir) / "run_meta.json"
    meta = {}
    if path.exists():
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            logger.warning(f"Ignoring unreadable {path}")
    finished = datetime.now(timezone.utc)
    meta.setdefault("commands", []).append({
        "command": command,
        "status": status,
        "config_hash": config_hash,
        "started": started.isoformat(),
        "finished": finished.isoformat(),
        "seconds": round((finished - started).total_seconds(), 3),
        **(extra or {}),
    })
    meta["environment"] = environment_fingerprint()
    return atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
