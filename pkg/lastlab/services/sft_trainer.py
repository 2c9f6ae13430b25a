"""
Two-phase supervised fine-tuning.

Phase 1 trains mostly the latent reasoning (alignment losses dominate, the
action head is nearly silent and cannot see the image); phase 2 inverts the
weights and lets the answer attend to the image again.

Features:
- Seeded batch order per (phase, epoch)
- Gradient accumulation and clipping
- Abort with a diagnostics dump on a non-finite loss
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch

from lastlab.adapters.alignment import alignment_losses, visual_mask
from lastlab.adapters.heads import adapter_outputs
from lastlab.config.run_config import RunConfig
from lastlab.policy.bundle import PolicyBundle
from lastlab.policy.decoding import answer_batch, batch_to_device, content_lookup, token_logprobs
from lastlab.policy.layout import scene_inputs
from lastlab.policy.masking import MaskPhase, mask_for
from lastlab.store.atomic import atomic_write_text
from lastlab.store.runlog import CsvLog
from lastlab.tokenizer.codec import serialize_trajectory
from lastlab.utils.determinism import torch_generator
from lastlab.utils.reliability import ConfigurationError, NonFiniteLossError
from lastlab.world.samples import SceneSample

logger = logging.getLogger(__name__)

SFT_LOG_COLUMNS = ("step", "phase", "ce", "l_wm", "l_3d", "total", "grad_norm")


@dataclass(frozen=True)
class PhaseWeights:
    action: float
    wm: float
    geo: float


def phase_weights(phase: int) -> PhaseWeights:
    if phase == 1:
        return PhaseWeights(action=0.01, wm=1.0, geo=1.0)
    if phase == 2:
        return PhaseWeights(action=1.0, wm=0.01, geo=0.01)
    raise ConfigurationError(f"unknown SFT phase {phase}")


def total_loss(ce, l_wm, l_3d, w: PhaseWeights):
    """Weighted sum; works on floats and tensors alike."""
    return w.action * ce + w.wm * l_wm + w.geo * l_3d


@dataclass
class LossBreakdown:
    step: int
    phase: int
    ce: float
    l_wm: float
    l_3d: float
    total: float
    grad_norm: float

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class SftResult:
    checkpoint: Path
    log_path: Path
    steps: int
    history: List[LossBreakdown]


def teacher_tensors(samples: Sequence[SceneSample], config: RunConfig, dtype: torch.dtype):
    f_geo = f_dyn = None
    if config.uses_geo:
        f_geo = torch.stack([torch.from_numpy(s.teacher.f_geo) for s in samples]).to(dtype)
    if config.uses_wm:
        f_dyn = torch.stack([torch.from_numpy(s.teacher.f_dyn) for s in samples]).to(dtype)
    return f_geo, f_dyn


def batch_losses(
    bundle: PolicyBundle,
    config: RunConfig,
    samples: Sequence[SceneSample],
    phase: int,
    mask_ratio: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(ce, l_wm, l_3d) for one micro-batch under the phase's mask."""
    device = bundle.model.tok_embed.weight.device
    inputs = [scene_inputs(s, config) for s in samples]
    answers = [serialize_trajectory(s.scene.gt_trajectory) for s in samples]
    batch, counts = answer_batch(inputs, answers, config, bundle.vocab, dtype=bundle.dtype)
    batch = batch_to_device(batch, device)

    allow = mask_for(config, MaskPhase.for_sft_phase(phase), batch.segments)
    out = bundle.model(batch, allow)
    logp, valid = token_logprobs(out.logits, batch, counts.to(device), content_lookup(bundle.vocab, device))
    ce = -logp.sum() / valid.sum()

    zero = ce.new_zeros(())
    if not config.supervised:
        return ce, zero, zero

    e_masked = visual_mask(out.e_img, mask_ratio, generator)
    p_geo, p_dyn = adapter_outputs(bundle.adapters, out.latent.h_geo, out.latent.h_dyn, e_masked)
    f_geo, f_dyn = teacher_tensors(samples, config, bundle.dtype)
    l_3d, l_wm = alignment_losses(
        p_geo, p_dyn,
        f_geo.to(device) if f_geo is not None else None,
        f_dyn.to(device) if f_dyn is not None else None,
    )
    return ce, l_wm, l_3d


class SftTrainer:
    def __init__(self, bundle: PolicyBundle, config: Optional[RunConfig] = None):
        self.bundle = bundle
        self.config = config or bundle.config
        s = self.config.sft

        self.params = list(bundle.model.parameters())
        if self.config.supervised:
            self.params += list(bundle.adapters.parameters())
        self.optimizer = torch.optim.Adam(
            self.params, lr=s.learning_rate, betas=(s.adam_beta1, s.adam_beta2), eps=s.adam_eps
        )
        self.mask_generator = torch_generator(self.config.seed, "visual-mask")
        self.step_count = 0

    def compute_losses(self, samples: Sequence[SceneSample], phase: int) -> Tuple[torch.Tensor, ...]:
        return batch_losses(
            self.bundle, self.config, samples, phase,
            mask_ratio=self.config.adapters.mask_ratio, generator=self.mask_generator,
        )

    def step(self, samples: Sequence[SceneSample], phase: int) -> LossBreakdown:
        """
        One optimizer step over `samples`, split into grad_accum micro-batches.

        Raises:
            NonFiniteLossError: a micro-batch produced NaN/inf.
        """
        if not samples:
            raise ConfigurationError("sft step needs a nonempty batch")
        s = self.config.sft
        weights = phase_weights(phase)
        self.bundle.model.train()
        self.bundle.adapters.train()
        self.optimizer.zero_grad(set_to_none=True)

        n_chunks = min(s.grad_accum, len(samples))
        chunk = -(-len(samples) // n_chunks)
        sums = {"ce": 0.0, "l_wm": 0.0, "l_3d": 0.0, "total": 0.0}
        for start in range(0, len(samples), chunk):
            part = samples[start:start + chunk]
            share = len(part) / len(samples)
            ce, l_wm, l_3d = self.compute_losses(part, phase)
            loss = total_loss(ce, l_wm, l_3d, weights)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite SFT loss at step {self.step_count} (phase {phase})",
                    diagnostics={
                        "step": self.step_count,
                        "phase": phase,
                        "ce": float(ce),
                        "l_wm": float(l_wm),
                        "l_3d": float(l_3d),
                        "scene_ids": [smp.scene.scene_id for smp in part],
                    },
                )
            (loss * share).backward()
            sums["ce"] += float(ce) * share
            sums["l_wm"] += float(l_wm) * share
            sums["l_3d"] += float(l_3d) * share
            sums["total"] += float(loss) * share

        max_norm = s.grad_clip if s.grad_clip > 0 else float("inf")
        grad_norm = float(torch.nn.utils.clip_grad_norm_(self.params, max_norm))
        self.optimizer.step()

        self.step_count += 1
        return LossBreakdown(step=self.step_count, phase=phase, grad_norm=grad_norm, **sums)


def sft_step(trainer: SftTrainer, samples: Sequence[SceneSample], phase: int) -> LossBreakdown:
    return trainer.step(samples, phase)


@torch.no_grad()
def evaluate_ce(bundle: PolicyBundle, samples: Sequence[SceneSample], config: RunConfig, phase: int = 2) -> float:
    """Mean answer cross-entropy (nats/token) without masking noise or updates."""
    if not samples:
        raise ConfigurationError("evaluate_ce needs samples")
    bundle.model.eval()
    total, count = 0.0, 0
    size = config.sft.batch_size
    for start in range(0, len(samples), size):
        part = samples[start:start + size]
        ce, _, _ = batch_losses(bundle, config, part, phase)
        total += float(ce) * len(part)
        count += len(part)
    return total / count


def _phase_samples(phase: int, hard: Sequence[SceneSample], full: Sequence[SceneSample]) -> Sequence[SceneSample]:
    return hard if phase == 1 else full


def run_sft(
    bundle: PolicyBundle,
    hard: Sequence[SceneSample],
    full: Sequence[SceneSample],
    run_dir: Path,
    config: Optional[RunConfig] = None,
) -> SftResult:
    """
    Run the configured phase schedule and write sft.pt plus sft_log.csv.

    Phase 1 consumes the hard split, phase 2 the full split. With zero
    epochs the checkpoint is the initialisation.
    """
    config = config or bundle.config
    s = config.sft
    run_dir = Path(run_dir)
    trainer = SftTrainer(bundle, config)
    log = CsvLog(run_dir / "sft_log.csv", SFT_LOG_COLUMNS, config.config_hash)
    history: List[LossBreakdown] = []

    for phase in s.schedule:
        samples = list(_phase_samples(phase, hard, full))
        epochs = s.phase1_epochs if phase == 1 else s.phase2_epochs
        if not samples or epochs == 0:
            logger.warning(f"SFT phase {phase}: nothing to do ({len(samples)} scenes, {epochs} epochs)")
            continue

        logger.info(f"SFT phase {phase}: {len(samples)} scenes x {epochs} epochs")
        phase_steps = 0
        for epoch in range(epochs):
            order = torch.randperm(len(samples), generator=torch_generator(config.seed, f"sft-{phase}-{epoch}"))
            for start in range(0, len(samples), s.batch_size):
                if s.max_steps and phase_steps >= s.max_steps:
                    break
                batch = [samples[int(i)] for i in order[start:start + s.batch_size]]
                try:
                    breakdown = trainer.step(batch, phase)
                except NonFiniteLossError as e:
                    dump = run_dir / "sft_diagnostics.json"
                    atomic_write_text(dump, json.dumps(e.diagnostics, indent=2, sort_keys=True) + "\n")
                    logger.error(f"{e}; diagnostics written to {dump}")
                    raise
                log.append(breakdown.as_row())
                history.append(breakdown)
                phase_steps += 1
                if breakdown.step % 50 == 0:
                    logger.info(
                        f"step {breakdown.step} phase {phase}: ce={breakdown.ce:.4f} "
                        f"l_wm={breakdown.l_wm:.4f} l_3d={breakdown.l_3d:.4f}"
                    )

        bundle.save(run_dir / f"sft_phase{phase}.pt")

    checkpoint = bundle.save(run_dir / "sft.pt")
    logger.info(f"SFT finished after {trainer.step_count} steps")
    return SftResult(checkpoint=checkpoint, log_path=log.path, steps=trainer.step_count, history=history)
