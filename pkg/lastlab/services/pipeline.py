"""
Run-directory workflow shared by the CLI and the ablation runner.

A run directory holds:
    config.txt            canonical config snapshot
    vocab.txt             vocabulary
    data/{easy,hard,eval}.jsonl
    sft.pt, sft_phase{1,2}.pt, sft_log.csv
    rl.pt, rl_log.csv
    eval.csv
    report/
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from lastlab.config.run_config import RunConfig, data_hash
from lastlab.config.settings import CONFIG_FORMAT, DEVICE
from lastlab.policy.bundle import PolicyBundle, build_vocab
from lastlab.services.evaluator import EvalReport, evaluate
from lastlab.services.grpo_trainer import GrpoResult, run_grpo
from lastlab.services.sft_trainer import SftResult, run_sft
from lastlab.store.atomic import atomic_write_text
from lastlab.store.datasets import read_dataset, write_dataset
from lastlab.utils.determinism import derive_seed, seed_everything
from lastlab.utils.reliability import MissingCheckpointError
from lastlab.world.samples import SceneSample, generate_samples

logger = logging.getLogger(__name__)

SPLITS = ("easy", "hard", "eval")
CHECKPOINT_PREFERENCE = ("rl.pt", "sft.pt")


def data_dir(run_dir: Path) -> Path:
    return Path(run_dir) / "data"


def split_seeds(config: RunConfig, split: str, n: int) -> List[int]:
    """Scene seeds for a split; disjoint across splits by construction of the label."""
    return [derive_seed(config.seed, f"{split}-{i}") for i in range(n)]


def split_samples(config: RunConfig, split: str) -> List[SceneSample]:
    d = config.data
    if split == "easy":
        return generate_samples(split_seeds(config, split, d.n_easy), "easy", config)
    if split == "hard":
        return generate_samples(split_seeds(config, split, d.n_hard), "hard", config)
    n_hard = int(round(d.n_eval * d.eval_hard_fraction))
    seeds = split_seeds(config, split, d.n_eval)
    return (
        generate_samples(seeds[:n_hard], "hard", config)
        + generate_samples(seeds[n_hard:], "easy", config)
    )


def generate_data(config: RunConfig, run_dir: Path) -> Dict[str, Path]:
    """Write every split; an empty split still gets a file with a header."""
    digest = data_hash(config)
    paths = {}
    for split in SPLITS:
        samples = split_samples(config, split)
        paths[split] = write_dataset(data_dir(run_dir) / f"{split}.jsonl", samples, split, digest)
    return paths


def load_split(config: RunConfig, run_dir: Path, split: str) -> List[SceneSample]:
    """Read a split, generating the datasets first when they are missing."""
    path = data_dir(run_dir) / f"{split}.jsonl"
    if not path.exists():
        logger.info(f"No {split} dataset in {run_dir}; generating")
        generate_data(config, run_dir)
    _, samples = read_dataset(path, expect_hash=data_hash(config))
    return samples


def write_snapshot(config: RunConfig, run_dir: Path) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        run_dir / "config.txt",
        f"# {CONFIG_FORMAT} config_hash={config.config_hash}\n{config.canonical()}",
        backup=False,
    )
    build_vocab(config).write(run_dir / "vocab.txt")


def find_checkpoint(run_dir: Path, name: Optional[str] = None) -> Path:
    """
    Raises:
        MissingCheckpointError: neither the named nor a default checkpoint exists.
    """
    run_dir = Path(run_dir)
    candidates = [Path(name) if Path(name).is_absolute() else run_dir / name] if name else [
        run_dir / c for c in CHECKPOINT_PREFERENCE
    ]
    for path in candidates:
        if path.exists():
            return path
    raise MissingCheckpointError(f"no checkpoint found (looked for {', '.join(str(c) for c in candidates)})")


def load_bundle(config: RunConfig, run_dir: Path, name: Optional[str] = None) -> PolicyBundle:
    path = find_checkpoint(run_dir, name)
    return PolicyBundle.from_checkpoint(path, config).to(DEVICE)


def run_sft_stage(config: RunConfig, run_dir: Path) -> SftResult:
    seed_everything(config.seed)
    hard = load_split(config, run_dir, "hard")
    full = load_split(config, run_dir, "easy") + hard
    bundle = PolicyBundle(config).to(DEVICE)
    return run_sft(bundle, hard, full, run_dir, config)


def run_rl_stage(config: RunConfig, run_dir: Path) -> GrpoResult:
    seed_everything(config.seed)
    bundle = load_bundle(config, run_dir, "sft.pt")
    pool = load_split(config, run_dir, "hard") + load_split(config, run_dir, "easy")
    return run_grpo(bundle, pool, run_dir, config)


def run_eval_stage(config: RunConfig, run_dir: Path, checkpoint: Optional[str] = None) -> EvalReport:
    seed_everything(config.seed)
    bundle = load_bundle(config, run_dir, checkpoint)
    samples = load_split(config, run_dir, "eval")
    return evaluate(bundle, samples, config, Path(run_dir) / "eval.csv")


@dataclass
class PipelineResult:
    run_dir: Path
    summary: Dict[str, float]
    fallback_rate: float


def run_pipeline(config: RunConfig, run_dir: Path) -> PipelineResult:
    """gen-data, sft, rl and eval in one go (the ablation unit of work)."""
    run_dir = Path(run_dir)
    write_snapshot(config, run_dir)
    generate_data(config, run_dir)
    run_sft_stage(config, run_dir)
    if config.grpo.iterations > 0:
        run_rl_stage(config, run_dir)
    report = run_eval_stage(config, run_dir)
    return PipelineResult(run_dir=run_dir, summary=report.summary, fallback_rate=report.fallback_rate)
