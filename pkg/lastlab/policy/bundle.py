"""
Planner plus adapters as one checkpointable unit.

Arrays are stored under the "policy." and "adapters." namespaces so GRPO can
freeze the adapters as a namespace.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import torch

from lastlab.adapters.heads import AdapterPair
from lastlab.config.run_config import RunConfig
from lastlab.policy.model import LatentPlanner
from lastlab.store.checkpoints import ADAPTER_NS, POLICY_NS, load_checkpoint, save_checkpoint
from lastlab.tokenizer.vocab import Vocabulary
from lastlab.utils.determinism import derive_seed
from lastlab.utils.reliability import ConfigurationError

logger = logging.getLogger(__name__)


def build_vocab(config: RunConfig) -> Vocabulary:
    return Vocabulary.build(config.world.speed_buckets, config.world.accel_buckets)


class PolicyBundle:
    def __init__(self, config: RunConfig, vocab: Optional[Vocabulary] = None, dtype: torch.dtype = torch.float32):
        self.config = config
        self.vocab = vocab or build_vocab(config)
        # Initialisation draws from its own stream
        state = torch.random.get_rng_state()
        torch.manual_seed(derive_seed(config.seed, "init"))
        try:
            self.model = LatentPlanner(config, len(self.vocab)).to(dtype)
            self.adapters = AdapterPair(config).to(dtype)
        finally:
            torch.random.set_rng_state(state)

    @property
    def dtype(self) -> torch.dtype:
        return self.model.dtype

    def to(self, device) -> "PolicyBundle":
        self.model.to(device)
        self.adapters.to(device)
        return self

    def state_arrays(self) -> Dict[str, torch.Tensor]:
        arrays = {POLICY_NS + k: v for k, v in self.model.state_dict().items()}
        arrays.update({ADAPTER_NS + k: v for k, v in self.adapters.state_dict().items()})
        return arrays

    def load_arrays(self, arrays: Dict[str, torch.Tensor]) -> None:
        policy = {k[len(POLICY_NS):]: v for k, v in arrays.items() if k.startswith(POLICY_NS)}
        adapters = {k[len(ADAPTER_NS):]: v for k, v in arrays.items() if k.startswith(ADAPTER_NS)}
        try:
            self.model.load_state_dict(policy, strict=True)
            self.adapters.load_state_dict(adapters, strict=True)
        except RuntimeError as e:
            raise ConfigurationError(f"checkpoint arrays do not match the model: {e}") from e

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.state_arrays(), self.config)

    @classmethod
    def from_checkpoint(cls, path: Path, config: Optional[RunConfig] = None) -> "PolicyBundle":
        """
        Rebuild from a checkpoint. The checkpoint's own config shapes the
        model unless `config` is given.

        Raises:
            MissingCheckpointError: no checkpoint at `path`.
        """
        checkpoint = load_checkpoint(path)
        bundle = cls(config or checkpoint.config)
        bundle.load_arrays(checkpoint.arrays)
        logger.info(f"Loaded checkpoint {path} (config {checkpoint.config_hash[:12]})")
        return bundle
