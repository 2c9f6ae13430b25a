"""
Seeding helpers.

Every stochastic stream in a run (initialisation, batch order, visual masks,
rollout sampling) gets its own seed derived from the run seed and a label,
so adding one stream never shifts another.
"""

import hashlib
import logging
import random

import numpy as np
import torch

logger = logging.getLogger(__name__)


def derive_seed(seed: int, label: str) -> int:
    """Stable 32-bit seed from (run seed, label)."""
    digest = hashlib.sha256(f"{int(seed)}|{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    logger.debug(f"Seeded python/numpy/torch with {seed}")


def torch_generator(seed: int, label: str) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(seed, label))
