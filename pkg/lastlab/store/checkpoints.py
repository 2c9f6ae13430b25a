"""
Checkpoint container.

A checkpoint is a torch.save'd dict:
    {"format": "lastlab-ckpt-v1", "config": canonical text,
     "config_hash": sha256, "arrays": {name: tensor}}
Array names are namespaced: "policy." for the planner, "adapters." for the
alignment adapters (frozen as a namespace during GRPO).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import torch

from lastlab.config.run_config import RunConfig, from_canonical
from lastlab.config.settings import CKPT_FORMAT
from lastlab.store.atomic import atomic_write
from lastlab.utils.reliability import ConfigurationError, MissingCheckpointError

logger = logging.getLogger(__name__)

POLICY_NS = "policy."
ADAPTER_NS = "adapters."


@dataclass
class Checkpoint:
    arrays: Dict[str, torch.Tensor]
    config_text: str
    config_hash: str

    @property
    def config(self) -> RunConfig:
        return from_canonical(self.config_text)

    def namespace(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Arrays under `prefix`, with the prefix stripped."""
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def save_checkpoint(path: Path, arrays: Dict[str, torch.Tensor], config: RunConfig) -> Path:
    """
    Write a checkpoint atomically.

    Raises:
        ArtifactWriteError: the write failed after retries (callers abort).
    """
    payload = {
        "format": CKPT_FORMAT,
        "config": config.canonical(),
        "config_hash": config.config_hash,
        "arrays": {name: t.detach().cpu().contiguous().clone() for name, t in sorted(arrays.items())},
    }
    atomic_write(path, lambda temp: torch.save(payload, temp))
    logger.info(f"Saved checkpoint {path} ({len(arrays)} arrays)")
    return Path(path)


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Raises:
        MissingCheckpointError: no file at `path`.
        ConfigurationError: not a lastlab checkpoint.
    """
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise ConfigurationError(f"{path}: not a {CKPT_FORMAT} checkpoint")
    return Checkpoint(
        arrays=dict(payload["arrays"]),
        config_text=payload["config"],
        config_hash=payload["config_hash"],
    )
