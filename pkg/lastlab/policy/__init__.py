"""Autoregressive latent planner: layout, masking, model and decoding."""

from lastlab.policy.decoding import GenerationResult, PlanOutcome, Rollout, generate, plan, token_logprobs
from lastlab.policy.layout import SceneInputs, SequenceLayout, build_sequence, collate, scene_inputs
from lastlab.policy.masking import AttentionMaskSpec, MaskPhase, build_mask, mask_for
from lastlab.policy.model import LatentChain, LatentPlanner, PolicyOutput

__all__ = [
    "AttentionMaskSpec",
    "GenerationResult",
    "LatentChain",
    "LatentPlanner",
    "MaskPhase",
    "PlanOutcome",
    "PolicyOutput",
    "Rollout",
    "SceneInputs",
    "SequenceLayout",
    "build_mask",
    "build_sequence",
    "collate",
    "generate",
    "mask_for",
    "plan",
    "scene_inputs",
    "token_logprobs",
]
