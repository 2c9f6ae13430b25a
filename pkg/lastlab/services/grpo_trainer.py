"""
Group Relative Policy Optimization on top of an SFT checkpoint.

Per scene: sample G answers at the rollout temperature, score each with the
composite reward, standardise rewards within the group, then take a clipped
surrogate step with a per-token KL penalty towards the frozen SFT policy.
The adapters are frozen for the whole stage.
"""

import copy
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from lastlab.config.run_config import GrpoConfig, RunConfig
from lastlab.metrics.closed_loop import pdms, sub_scores
from lastlab.policy.bundle import PolicyBundle
from lastlab.policy.decoding import (
    Rollout,
    answer_batch,
    batch_to_device,
    content_lookup,
    generate,
    token_logprobs,
)
from lastlab.policy.layout import SceneInputs, scene_inputs
from lastlab.policy.masking import MaskPhase, mask_for
from lastlab.policy.model import LatentPlanner
from lastlab.store.runlog import CsvLog
from lastlab.tokenizer.codec import parse_trajectory, required_tags, validate_format
from lastlab.utils.determinism import derive_seed, torch_generator
from lastlab.utils.logging_config import error_tracker
from lastlab.utils.reliability import ConfigurationError, NonFiniteLossError
from lastlab.world.samples import SceneSample
from lastlab.world.scene import SceneRecord

logger = logging.getLogger(__name__)

RL_LOG_COLUMNS = (
    "iter", "mean_reward", "reward_std", "r_traj", "r_fmt", "r_goal",
    "kl", "clip_frac", "fallback_rate", "entropy", "skipped",
)

# Population std below this counts as a degenerate group
ADVANTAGE_EPS = 1e-8


@dataclass(frozen=True)
class RewardBreakdown:
    r_traj: float
    r_fmt: float
    r_goal: float
    total: float


def goal_reward(pred_end, gt_end, tiers: Sequence[float] = (0.5, 1.0, 2.0),
                rewards: Sequence[float] = (1.0, 0.5, 0.25)) -> float:
    """Tiered reward on the L1 distance between endpoints."""
    d = float(np.abs(np.asarray(pred_end, dtype=np.float64) - np.asarray(gt_end, dtype=np.float64)).sum())
    for tier, reward in zip(tiers, rewards):
        if d <= tier:
            return float(reward)
    return 0.0


def compute_reward(tokens: Sequence[str], scene: SceneRecord, config: Optional[RunConfig] = None,
                   required: Optional[Sequence[str]] = None) -> RewardBreakdown:
    """Composite reward for one generated sequence. Never raises on malformed input."""
    config = config or RunConfig()
    g = config.grpo
    if required is None:
        required = required_tags(config.uses_wm, config.uses_geo)

    check = validate_format(tokens, required)
    r_fmt = 0.5 * check.tags_ok + 0.5 * check.syntax_ok
    r_traj = r_goal = 0.0
    if check.syntax_ok:
        traj = parse_trajectory(tokens)
        r_traj = pdms(sub_scores(scene, traj, config.metrics, config.world.waypoint_dt))
        r_goal = goal_reward(traj.endpoint, scene.gt_trajectory.endpoint, g.goal_tiers, g.goal_rewards)
    total = g.w_traj * r_traj + g.w_fmt * r_fmt + g.w_goal * r_goal
    return RewardBreakdown(r_traj=float(r_traj), r_fmt=float(r_fmt), r_goal=float(r_goal), total=float(total))


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """(R - mean) / popstd within the group; all zeros for a constant group."""
    r = np.asarray(rewards, dtype=np.float64)
    std = r.std()
    if std < ADVANTAGE_EPS:
        return np.zeros_like(r)
    return (r - r.mean()) / std


@dataclass
class ObjectiveTerms:
    objective: torch.Tensor  # to maximise
    surrogate: torch.Tensor
    kl: torch.Tensor
    clip_fraction: float


def grpo_objective(
    logp_new: torch.Tensor,
    logp_old: torch.Tensor,
    advantages: torch.Tensor,
    mask: torch.Tensor,
    clip_eps: float,
    kl_beta: float,
    logp_ref: Optional[torch.Tensor] = None,
) -> ObjectiveTerms:
    """
    Clipped surrogate minus beta * KL, averaged per sequence then over the group.

    All log-prob tensors are (G, T) over sampled tokens; `mask` marks the
    valid ones. KL per token is r - log r - 1 with r = pi_ref / pi_theta.

    Raises:
        ConfigurationError: misaligned shapes.
    """
    shape = logp_new.shape
    if logp_old.shape != shape or mask.shape != shape or (logp_ref is not None and logp_ref.shape != shape):
        raise ConfigurationError("log-probabilities, mask and reference must share one (G, T) shape")
    if advantages.shape != shape[:1]:
        raise ConfigurationError(f"advantages {tuple(advantages.shape)} do not match group size {shape[0]}")

    mask = mask.to(logp_new.dtype)
    counts = mask.sum(dim=1).clamp(min=1.0)
    adv = advantages.to(logp_new.dtype).unsqueeze(-1)

    ratio = torch.exp(logp_new - logp_old)
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    per_token = torch.minimum(ratio * adv, clipped * adv)
    surrogate = ((per_token * mask).sum(dim=1) / counts).mean()

    if logp_ref is not None and kl_beta != 0:
        log_r = logp_ref - logp_new
        kl_token = torch.exp(log_r) - log_r - 1.0
        kl = ((kl_token * mask).sum(dim=1) / counts).mean()
    else:
        kl = logp_new.new_zeros(())

    with torch.no_grad():
        outside = ((ratio - 1.0).abs() > clip_eps).to(mask.dtype) * mask
        clip_fraction = float(outside.sum() / mask.sum().clamp(min=1.0))

    return ObjectiveTerms(objective=surrogate - kl_beta * kl, surrogate=surrogate, kl=kl, clip_fraction=clip_fraction)


@dataclass
class RolloutGroup:
    scene: SceneRecord
    inputs: SceneInputs
    rollouts: List[Rollout]
    rewards: List[RewardBreakdown]
    advantages: np.ndarray


@dataclass
class IterationStats:
    iter: int
    mean_reward: float
    reward_std: float
    r_traj: float
    r_fmt: float
    r_goal: float
    kl: float
    clip_frac: float
    fallback_rate: float
    entropy: float
    skipped: int

    def as_row(self) -> dict:
        return asdict(self)


def freeze(module: torch.nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)


class GrpoTrainer:
    def __init__(self, bundle: PolicyBundle, config: Optional[RunConfig] = None,
                 ref_model: Optional[LatentPlanner] = None):
        self.bundle = bundle
        self.config = config or bundle.config
        g: GrpoConfig = self.config.grpo

        freeze(bundle.adapters)
        self.ref_model = ref_model if ref_model is not None else copy.deepcopy(bundle.model)
        freeze(self.ref_model)
        self.ref_model.eval()

        self.optimizer = torch.optim.Adam(bundle.model.parameters(), lr=g.learning_rate)
        self.generator = torch_generator(self.config.seed, "rollouts")
        self.device = bundle.model.tok_embed.weight.device
        self.lookup = content_lookup(bundle.vocab, self.device)
        self.required = required_tags(self.config.uses_wm, self.config.uses_geo)
        self.iteration_count = 0

    def sample_group(self, sample: SceneSample) -> RolloutGroup:
        config, g = self.config, self.config.grpo
        inputs = scene_inputs(sample, config)
        self.bundle.model.eval()
        result = generate(
            self.bundle.model, self.bundle.vocab, inputs, config,
            n=g.group_size, temperature=g.temperature, generator=self.generator,
        )
        rewards = [compute_reward(r.tokens, sample.scene, config, self.required) for r in result.rollouts]
        advantages = group_advantages([r.total for r in rewards])
        return RolloutGroup(sample.scene, inputs, result.rollouts, rewards, advantages)

    def _sequence_logprobs(self, model: LatentPlanner, group: RolloutGroup):
        config = self.config
        answers = [r.answer for r in group.rollouts]
        batch, _ = answer_batch([group.inputs] * len(answers), answers, config, self.bundle.vocab,
                                dtype=self.bundle.dtype)
        batch = batch_to_device(batch, self.device)
        counts = torch.tensor([r.n_sampled for r in group.rollouts], dtype=torch.long, device=self.device)
        allow = mask_for(config, MaskPhase.PHASE2_AND_RL, batch.segments)
        out = model(batch, allow)
        return token_logprobs(out.logits, batch, counts, self.lookup, config.grpo.temperature)

    def update(self, group: RolloutGroup) -> Optional[ObjectiveTerms]:
        """
        Clipped-surrogate steps for one group; None when the step was skipped.
        """
        g = self.config.grpo
        if not any(r.n_sampled for r in group.rollouts):
            return None
        with torch.no_grad():
            logp_old, mask = self._sequence_logprobs(self.bundle.model, group)
            logp_ref, _ = self._sequence_logprobs(self.ref_model, group)
        advantages = torch.from_numpy(group.advantages).to(self.device)

        terms = None
        self.bundle.model.train()
        for _ in range(max(g.reuse_epochs, 1)):
            logp_new, _ = self._sequence_logprobs(self.bundle.model, group)
            terms = grpo_objective(logp_new, logp_old, advantages, mask, g.clip_eps, g.kl_beta, logp_ref)
            if not torch.isfinite(terms.objective):
                error_tracker.record(
                    NonFiniteLossError(f"non-finite GRPO objective (scene {group.scene.scene_id})"),
                    context="grpo update skipped",
                )
                logger.warning(f"Skipping GRPO update for scene {group.scene.scene_id}: non-finite objective")
                self.optimizer.zero_grad(set_to_none=True)
                return None
            self.optimizer.zero_grad(set_to_none=True)
            (-terms.objective).backward()
            if g.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.bundle.model.parameters(), g.grad_clip)
            self.optimizer.step()
        return terms

    def iteration(self, samples: Sequence[SceneSample]) -> IterationStats:
        totals, parts, kls, clips, entropies = [], [], [], [], []
        fallbacks = skipped = 0
        for sample in samples:
            group = self.sample_group(sample)
            for reward in group.rewards:
                totals.append(reward.total)
                parts.append((reward.r_traj, reward.r_fmt, reward.r_goal))
                if reward.r_fmt < 1.0:
                    fallbacks += 1
            entropies.extend(float(r.entropies.mean()) for r in group.rollouts if r.n_sampled)
            terms = self.update(group)
            if terms is None:
                skipped += 1
                continue
            kls.append(float(terms.kl))
            clips.append(terms.clip_fraction)

        parts_arr = np.array(parts, dtype=np.float64).reshape(-1, 3)
        stats = IterationStats(
            iter=self.iteration_count,
            mean_reward=float(np.mean(totals)) if totals else 0.0,
            reward_std=float(np.std(totals)) if totals else 0.0,
            r_traj=float(parts_arr[:, 0].mean()) if len(parts_arr) else 0.0,
            r_fmt=float(parts_arr[:, 1].mean()) if len(parts_arr) else 0.0,
            r_goal=float(parts_arr[:, 2].mean()) if len(parts_arr) else 0.0,
            kl=float(np.mean(kls)) if kls else 0.0,
            clip_frac=float(np.mean(clips)) if clips else 0.0,
            fallback_rate=fallbacks / max(len(totals), 1),
            entropy=float(np.mean(entropies)) if entropies else 0.0,
            skipped=skipped,
        )
        self.iteration_count += 1
        return stats


def grpo_iteration(trainer: GrpoTrainer, samples: Sequence[SceneSample]) -> IterationStats:
    return trainer.iteration(samples)


@dataclass
class GrpoResult:
    checkpoint: Path
    log_path: Path
    history: List[IterationStats]


def iteration_scenes(samples: Sequence[SceneSample], config: RunConfig, iteration: int) -> List[SceneSample]:
    """Seeded subset of the frozen scene pool for one iteration."""
    k = min(config.grpo.scenes_per_iteration, len(samples))
    rng = np.random.default_rng(derive_seed(config.seed, f"grpo-iter-{iteration}"))
    return [samples[int(i)] for i in rng.choice(len(samples), size=k, replace=False)]


def run_grpo(bundle: PolicyBundle, samples: Sequence[SceneSample], run_dir: Path,
             config: Optional[RunConfig] = None) -> GrpoResult:
    """
    GRPO from the bundle's current (SFT) weights; writes rl.pt and rl_log.csv.

    The reference policy is a frozen copy of the starting weights.
    """
    config = config or bundle.config
    if not samples:
        raise ConfigurationError("GRPO needs at least one scene")
    run_dir = Path(run_dir)
    trainer = GrpoTrainer(bundle, config)
    log = CsvLog(
        run_dir / "rl_log.csv", RL_LOG_COLUMNS, config.config_hash,
        extra_header={"goal_tiers": ",".join(repr(t) for t in config.grpo.goal_tiers)},
    )
    history = []
    for i in range(config.grpo.iterations):
        stats = trainer.iteration(iteration_scenes(samples, config, i))
        log.append(stats.as_row())
        history.append(stats)
        logger.info(
            f"GRPO iter {i}: reward={stats.mean_reward:.3f} (std {stats.reward_std:.3f}) "
            f"kl={stats.kl:.4f} clip={stats.clip_frac:.3f}"
        )
    checkpoint = bundle.save(run_dir / "rl.pt")
    return GrpoResult(checkpoint=checkpoint, log_path=log.path, history=history)
