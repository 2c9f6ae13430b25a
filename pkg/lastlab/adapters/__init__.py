"""Training-only adapters projecting latent states into teacher feature space."""

from lastlab.adapters.alignment import alignment_losses, visual_mask
from lastlab.adapters.heads import (
    AdapterPair,
    DynamicsAdapter,
    GeometryAdapter,
    LatentAdapter,
    adapter_outputs,
    dynamics_adapter,
    geometry_adapter,
)

__all__ = [
    "AdapterPair",
    "DynamicsAdapter",
    "GeometryAdapter",
    "LatentAdapter",
    "adapter_outputs",
    "alignment_losses",
    "dynamics_adapter",
    "geometry_adapter",
    "visual_mask",
]
