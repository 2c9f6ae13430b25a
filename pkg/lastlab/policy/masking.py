"""
Structured causal masking.

Causal base mask, then:
  - latent mutual masking: WM and GEO positions never attend to each other
  - visual bottleneck (phase 1 only): ACT positions never attend to IMG
"""

from dataclasses import dataclass
from enum import Enum
from typing import Union

import torch

from lastlab.config.run_config import RunConfig
from lastlab.policy.layout import Segment, SequenceLayout

_IMG, _WM, _GEO, _ACT = int(Segment.IMG), int(Segment.WM), int(Segment.GEO), int(Segment.ACT)


class MaskPhase(str, Enum):
    PHASE1 = "phase1"
    PHASE2_AND_RL = "phase2_and_rl"

    @classmethod
    def for_sft_phase(cls, phase: int) -> "MaskPhase":
        return cls.PHASE1 if phase == 1 else cls.PHASE2_AND_RL


@dataclass(eq=False)
class AttentionMaskSpec:
    allow: torch.Tensor  # (L, L) or (B, L, L) bool; rows are queries

    def forbidden(self) -> torch.Tensor:
        return ~self.allow


def allow_from_segments(
    segments: torch.Tensor,
    phase: MaskPhase,
    mutual: bool = True,
    bottleneck: bool = True,
) -> torch.Tensor:
    """
    Boolean attention permissions from per-position segment labels.

    Args:
        segments: (L,) or (B, L) segment ids
        mutual: apply latent mutual masking
        bottleneck: apply the ACT->IMG block (only honoured in phase 1)
    """
    length = segments.shape[-1]
    allow = torch.tril(torch.ones(length, length, dtype=torch.bool, device=segments.device))
    if segments.dim() == 2:
        allow = allow.expand(segments.shape[0], length, length).clone()

    q = segments.unsqueeze(-1)
    k = segments.unsqueeze(-2)
    blocked = torch.zeros_like(allow)
    if mutual:
        blocked |= (q == _WM) & (k == _GEO)
        blocked |= (q == _GEO) & (k == _WM)
    if bottleneck and phase == MaskPhase.PHASE1:
        blocked |= (q == _ACT) & (k == _IMG)

    allow = allow & ~blocked
    eye = torch.eye(length, dtype=torch.bool, device=segments.device)
    return allow | eye


def build_mask(layout: SequenceLayout, phase: Union[MaskPhase, str]) -> AttentionMaskSpec:
    """Structured causal mask for one layout."""
    segments = torch.from_numpy(layout.segments())
    return AttentionMaskSpec(allow=allow_from_segments(segments, MaskPhase(phase)))


def mask_for(config: RunConfig, phase: Union[MaskPhase, str], segments: torch.Tensor) -> torch.Tensor:
    """Batch mask honouring the run's mask mode and the phase-2 mutual-mask switch."""
    phase = MaskPhase(phase)
    if config.run.mask == "standard":
        return allow_from_segments(segments, phase, mutual=False, bottleneck=False)
    mutual = phase == MaskPhase.PHASE1 or config.policy.phase2_mutual_mask
    return allow_from_segments(segments, phase, mutual=mutual, bottleneck=True)
