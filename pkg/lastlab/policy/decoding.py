"""
Decoding: grammar-forced sampling of the answer span, teacher-forced
log-probabilities, and greedy planning with a constant-velocity fallback.

Latent slots and structural tags are laid out by build_sequence; only the
answer content is ever sampled, from the restricted content alphabet.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from lastlab.config.run_config import RunConfig
from lastlab.policy.layout import SceneInputs, Segment, SequenceBatch, build_sequence, collate
from lastlab.policy.masking import MaskPhase, mask_for
from lastlab.policy.model import LatentChain, LatentPlanner, restricted_log_probs
from lastlab.tokenizer import vocab as V
from lastlab.tokenizer.codec import FUTURE_LEN, Trajectory, parse_trajectory
from lastlab.tokenizer.vocab import Vocabulary
from lastlab.utils.logging_config import error_tracker
from lastlab.utils.reliability import ConfigurationError, FormatError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Rollout:
    tokens: List[str]  # full sequence: prompt, latent tags, answer
    answer: List[str]  # '<answer>' ... (closing tag when present)
    logprobs: np.ndarray  # per sampled token
    entropies: np.ndarray  # per sampled token
    closed: bool
    forced_close: bool

    @property
    def n_sampled(self) -> int:
        return len(self.logprobs)


@dataclass(eq=False)
class GenerationResult:
    rollouts: List[Rollout]
    latent: LatentChain


@dataclass(eq=False)
class PlanOutcome:
    trajectory: Trajectory
    fallback: bool
    tokens: List[str] = field(default_factory=list)
    error_code: Optional[str] = None


def content_lookup(vocab: Vocabulary, device=None) -> Tuple[torch.Tensor, torch.Tensor]:
    """(content ids, vocab id -> content index or -1)."""
    ids = torch.tensor(vocab.content_ids, dtype=torch.long, device=device)
    lookup = torch.full((len(vocab),), -1, dtype=torch.long, device=device)
    lookup[ids] = torch.arange(len(ids), device=device)
    return ids, lookup


@torch.no_grad()
def generate(
    model: LatentPlanner,
    vocab: Vocabulary,
    inputs: SceneInputs,
    config: RunConfig,
    n: int = 1,
    temperature: float = 1.0,
    greedy: bool = False,
    generator: Optional[torch.Generator] = None,
    force_grammar: bool = True,
    phase: MaskPhase = MaskPhase.PHASE2_AND_RL,
) -> GenerationResult:
    """
    Sample `n` answers for one scene.

    The prompt (image, text, latent segments, '<answer>') is embedded once;
    each step appends one sampled content token. Rows that emitted
    '</answer>' continue with padding that nothing downstream reads.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")

    prompt = build_sequence(inputs, config, vocab)
    batch = collate([prompt] * n, vocab.pad_id, dtype=model.dtype)
    device = model.tok_embed.weight.device
    batch = batch_to_device(batch, device)

    prompt_allow = mask_for(config, phase, batch.segments)
    prompt_embeds = model.input_embeddings(batch, prompt_allow)
    prompt_out = model.run(prompt_embeds, prompt_allow, batch=batch)
    latent = prompt_out.latent

    content_ids, _ = content_lookup(vocab, device)
    end_index = V.CONTENT_TOKENS.index(V.ANSWER_END)
    budget = config.policy.max_answer_tokens

    sampled = torch.zeros((n, 0), dtype=torch.long, device=device)
    logprobs = torch.zeros((n, 0), dtype=prompt_embeds.dtype, device=device)
    entropies = torch.zeros((n, 0), dtype=prompt_embeds.dtype, device=device)
    done = torch.zeros(n, dtype=torch.bool, device=device)
    n_sampled = torch.zeros(n, dtype=torch.long, device=device)
    act_segment = torch.full((n, 1), int(Segment.ACT), dtype=torch.long, device=device)

    logits = prompt_out.logits[:, -1]
    for step in range(budget):
        log_p = restricted_log_probs(logits, content_ids, temperature)
        if greedy:
            choice = log_p.argmax(dim=-1)
        else:
            choice = torch.multinomial(log_p.exp(), 1, generator=generator).squeeze(-1)

        token = torch.where(done, torch.full_like(choice, vocab.pad_id), content_ids[choice])
        chosen_lp = log_p.gather(-1, choice.unsqueeze(-1)).squeeze(-1)
        entropy = -(log_p.exp() * log_p).sum(dim=-1)

        sampled = torch.cat([sampled, token.unsqueeze(-1)], dim=1)
        logprobs = torch.cat([logprobs, chosen_lp.unsqueeze(-1)], dim=1)
        entropies = torch.cat([entropies, entropy.unsqueeze(-1)], dim=1)
        n_sampled = n_sampled + (~done).long()
        done = done | (choice == end_index)
        if bool(done.all()) or step == budget - 1:
            break

        embeds = torch.cat([prompt_embeds, model.tok_embed(sampled)], dim=1)
        segments = torch.cat([batch.segments, act_segment.expand(n, sampled.shape[1])], dim=1)
        out = model.run(embeds, mask_for(config, phase, segments))
        logits = out.logits[:, -1]

    prompt_tokens = vocab.decode(prompt.token_ids)
    rollouts = []
    for i in range(n):
        k = int(n_sampled[i])
        answer_ids = sampled[i, :k].tolist()
        answer = [V.ANSWER_START] + vocab.decode(answer_ids)
        closed = bool(done[i])
        forced = False
        if not closed and force_grammar:
            answer.append(V.ANSWER_END)
            forced = True
        rollouts.append(Rollout(
            tokens=prompt_tokens[:-1] + answer,
            answer=answer,
            logprobs=logprobs[i, :k].double().cpu().numpy(),
            entropies=entropies[i, :k].double().cpu().numpy(),
            closed=closed,
            forced_close=forced,
        ))
    return GenerationResult(rollouts=rollouts, latent=latent)


def token_logprobs(
    logits: torch.Tensor,
    batch: SequenceBatch,
    counts: torch.Tensor,
    lookup: Tuple[torch.Tensor, torch.Tensor],
    temperature: float = 1.0,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Teacher-forced log-probabilities of answer tokens.

    The token at position p is predicted by the logits at p - 1; the first
    `counts[b]` tokens after '<answer>' are scored.

    Returns:
        (logprobs (B, T), valid mask (B, T)) with T = counts.max()
    """
    content_ids, index_of = lookup
    size, length, vocab_size = logits.shape
    t_max = max(int(counts.max()), 1)
    offsets = torch.arange(t_max, device=logits.device)
    positions = batch.act_start.unsqueeze(-1) + 1 + offsets
    valid = offsets.unsqueeze(0) < counts.unsqueeze(-1)
    if bool((positions[valid] >= length).any()):
        raise ConfigurationError("answer counts extend past the sequence")
    positions = positions.clamp(max=length - 1)

    targets = batch.token_ids.gather(1, positions)
    target_index = index_of[targets]
    if bool((target_index[valid] < 0).any()):
        raise ConfigurationError("answer contains tokens outside the content alphabet")

    step_logits = logits.gather(1, (positions - 1).unsqueeze(-1).expand(-1, -1, vocab_size))
    log_p = restricted_log_probs(step_logits, content_ids, temperature)
    picked = log_p.gather(-1, target_index.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return picked * valid, valid


def answer_batch(
    inputs: Sequence[SceneInputs],
    answers: Sequence[Sequence[str]],
    config: RunConfig,
    vocab: Vocabulary,
    dtype: torch.dtype = torch.float32,
) -> Tuple[SequenceBatch, torch.Tensor]:
    """Teacher-forcing batch plus the number of scored tokens per row."""
    sequences = [build_sequence(x, config, vocab, answer=a) for x, a in zip(inputs, answers)]
    counts = torch.tensor([s.layout.n_act - 1 for s in sequences], dtype=torch.long)
    return collate(sequences, vocab.pad_id, dtype=dtype), counts


def constant_velocity(speed: float, n: int = FUTURE_LEN, dt: float = 0.5) -> Trajectory:
    """Straight-ahead fallback at the current speed."""
    y = speed * dt * np.arange(1, n + 1)
    return Trajectory(np.column_stack([np.zeros(n), y]))


def plan(model: LatentPlanner, vocab: Vocabulary, inputs: SceneInputs, config: RunConfig) -> PlanOutcome:
    """Greedy decode and parse; unparseable answers fall back to constant velocity."""
    result = generate(model, vocab, inputs, config, n=1, greedy=True)
    rollout = result.rollouts[0]
    try:
        trajectory = parse_trajectory(rollout.answer)
        return PlanOutcome(trajectory=trajectory, fallback=False, tokens=rollout.tokens)
    except FormatError as e:
        error_tracker.record(e, context="plan fallback")
        logger.debug(f"Plan fallback ({e.code}): {e}")
        fallback = constant_velocity(inputs.ego_speed, dt=config.world.waypoint_dt)
        return PlanOutcome(trajectory=fallback, fallback=True, tokens=rollout.tokens, error_code=e.code)


def batch_to_device(batch: SequenceBatch, device) -> SequenceBatch:
    if device is None or batch.token_ids.device == torch.device(device):
        return batch

    def move(t):
        return t.to(device) if t is not None else None

    return SequenceBatch(
        token_ids=move(batch.token_ids),
        segments=move(batch.segments),
        slot_index=move(batch.slot_index),
        raster=move(batch.raster),
        lengths=move(batch.lengths),
        act_start=move(batch.act_start),
        wm_positions=move(batch.wm_positions),
        geo_positions=move(batch.geo_positions),
        layouts=batch.layouts,
    )
