"""
Run configuration: typed per-module sections, flat key=value file format,
canonical rendering and a stable hash.

File format (one setting per line, '#' starts a comment):

    sft.learning_rate = 3e-4
    run.mask = structured
    grpo.goal_tiers = 0.5, 1.0, 2.0
"""

import dataclasses
import hashlib
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from lastlab.utils.reliability import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class WorldConfig:
    grid_size: int = 64
    resolution: float = 0.5  # meters per raster cell
    ego_row: int = 48
    ego_col: int = 32
    feature_dim: int = 32  # d_t
    r_max: float = 20.0
    duration: float = 6.0
    horizons: Tuple[float, ...] = (1.0, 2.0, 3.0)
    ego_radius: float = 1.0
    history_len: int = 4
    future_len: int = 6
    waypoint_dt: float = 0.5
    goal_ahead: float = 20.0
    speed_buckets: int = 16
    accel_buckets: int = 16
    max_speed: float = 12.0
    max_accel: float = 4.0


@dataclass
class LatentConfig:
    n_3d: int = 12
    n_wm: int = 12
    wm_groups: int = 3


@dataclass
class PolicyConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    patch_size: int = 8
    max_len: int = 320
    max_answer_tokens: int = 96
    latent_feedback: bool = False
    phase2_mutual_mask: bool = True


@dataclass
class AdapterConfig:
    n_heads: int = 4
    mask_ratio: float = 0.5
    key_positional: bool = True


@dataclass
class SftConfig:
    schedule: Tuple[int, ...] = (1, 2)
    phase1_epochs: int = 2
    phase2_epochs: int = 2
    max_steps: int = 0  # per phase, 0 = no cap
    learning_rate: float = 3e-4
    batch_size: int = 8
    grad_accum: int = 1
    grad_clip: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class GrpoConfig:
    group_size: int = 8
    temperature: float = 2.0
    clip_eps: float = 0.2
    kl_beta: float = 0.1
    learning_rate: float = 1e-5
    iterations: int = 100
    scenes_per_iteration: int = 8
    reuse_epochs: int = 1
    grad_clip: float = 1.0
    w_traj: float = 8.0
    w_fmt: float = 1.0
    w_goal: float = 1.0
    goal_tiers: Tuple[float, ...] = (0.5, 1.0, 2.0)
    goal_rewards: Tuple[float, ...] = (1.0, 0.5, 0.25)


@dataclass
class MetricConfig:
    ego_radius: float = 1.0
    step: float = 0.1
    ttc_horizon: float = 1.0
    max_accel: float = 4.0
    max_jerk: float = 8.0
    stopped_speed: float = 5e-3
    ddc_tolerance: float = 0.5
    lk_fraction: float = 0.5
    ec_threshold: float = 0.5
    min_progress: float = 0.5
    replan_dt: float = 0.5
    replan_check: bool = True


@dataclass
class DataConfig:
    n_easy: int = 200
    n_hard: int = 200
    n_eval: int = 100
    eval_hard_fraction: float = 0.5


@dataclass
class RunSection:
    seed: int = 0
    latent_supervision: str = "on"
    reasoning: str = "latent"
    mask: str = "structured"
    alignment: str = "both"


MODE_CHOICES = {
    "latent_supervision": ("on", "off"),
    "reasoning": ("latent", "none"),
    "mask": ("structured", "standard"),
    "alignment": ("both", "geo_only", "wm_only"),
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    world: WorldConfig = field(default_factory=WorldConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    adapters: AdapterConfig = field(default_factory=AdapterConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def uses_geo(self) -> bool:
        return self.run.reasoning == "latent" and self.run.alignment in ("both", "geo_only")

    @property
    def uses_wm(self) -> bool:
        return self.run.reasoning == "latent" and self.run.alignment in ("both", "wm_only")

    @property
    def supervised(self) -> bool:
        return self.run.reasoning == "latent" and self.run.latent_supervision == "on"

    def sections(self):
        for f in dataclasses.fields(self):
            yield f.name, getattr(self, f.name)

    def to_flat(self) -> dict:
        flat = {}
        for section_name, section in self.sections():
            for f in dataclasses.fields(section):
                flat[f"{section_name}.{f.name}"] = getattr(section, f.name)
        return flat

    def canonical(self) -> str:
        """Sorted key=value lines; the input to config_hash."""
        lines = [f"{key}={_render(value)}" for key, value in sorted(self.to_flat().items())]
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def validate(self) -> None:
        """Raise ConfigError listing every invalid field."""
        messages = []

        for key, choices in MODE_CHOICES.items():
            value = getattr(self.run, key)
            if value not in choices:
                messages.append(f"run.{key}: expected one of {list(choices)}, got {value!r}")

        if self.run.reasoning == "none" and self.run.latent_supervision == "on":
            messages.append("run.latent_supervision: must be 'off' when run.reasoning is 'none'")
        if self.run.reasoning == "none" and self.run.alignment != "both":
            messages.append("run.alignment: only 'both' is meaningful when run.reasoning is 'none'")
        if self.run.seed < 0:
            messages.append("run.seed: must be >= 0")

        if self.latent.n_3d < 1 or self.latent.n_wm < 1 or self.latent.wm_groups < 1:
            messages.append("latent: token counts must be >= 1")
        if len(self.world.horizons) != self.latent.wm_groups:
            messages.append(
                f"world.horizons: need {self.latent.wm_groups} horizons, got {len(self.world.horizons)}"
            )

        p = self.policy
        if p.d_model % p.n_heads != 0:
            messages.append(f"policy.n_heads: {p.n_heads} does not divide d_model={p.d_model}")
        if p.d_model % self.adapters.n_heads != 0:
            messages.append(
                f"adapters.n_heads: {self.adapters.n_heads} does not divide d_model={p.d_model}"
            )
        if self.world.grid_size % p.patch_size != 0:
            messages.append(f"policy.patch_size: {p.patch_size} does not divide grid_size")
        if p.max_len < required_length(self):
            messages.append(f"policy.max_len: {p.max_len} < required sequence length {required_length(self)}")

        if not 0.0 <= self.adapters.mask_ratio < 1.0:
            messages.append(f"adapters.mask_ratio: must be in [0, 1), got {self.adapters.mask_ratio}")

        s = self.sft
        if s.learning_rate < 0:
            messages.append("sft.learning_rate: must be >= 0")
        if s.phase1_epochs < 0 or s.phase2_epochs < 0:
            messages.append("sft: epochs must be >= 0")
        if s.batch_size < 1 or s.grad_accum < 1:
            messages.append("sft: batch_size and grad_accum must be >= 1")
        if any(ph not in (1, 2) for ph in s.schedule):
            messages.append(f"sft.schedule: phases must be 1 or 2, got {list(s.schedule)}")

        g = self.grpo
        if g.group_size < 2:
            messages.append("grpo.group_size: must be >= 2")
        if not 0.0 < g.clip_eps < 1.0:
            messages.append("grpo.clip_eps: must be in (0, 1)")
        if g.kl_beta < 0:
            messages.append("grpo.kl_beta: must be >= 0")
        if g.temperature <= 0:
            messages.append("grpo.temperature: must be > 0")
        if len(g.goal_tiers) != len(g.goal_rewards):
            messages.append("grpo.goal_rewards: must match grpo.goal_tiers in length")
        if list(g.goal_tiers) != sorted(g.goal_tiers):
            messages.append("grpo.goal_tiers: must be increasing")

        for name in ("n_easy", "n_hard", "n_eval"):
            if getattr(self.data, name) < 0:
                messages.append(f"data.{name}: must be >= 0")

        if messages:
            raise ConfigError(messages)


def required_length(config: RunConfig) -> int:
    """Longest sequence the layout can produce for this config."""
    w, p, lat = config.world, config.policy, config.latent
    n_patches = (w.grid_size // p.patch_size) ** 2
    # bos, instruction, speed, accel, history "x,y;" chars (<= 11 each), eos-free
    n_txt = 4 + w.history_len * 12
    n_latent = 0
    if config.uses_wm:
        n_latent += lat.wm_groups * lat.n_wm + 2
    if config.uses_geo:
        n_latent += lat.n_3d + 2
    return n_patches + n_txt + n_latent + 1 + p.max_answer_tokens + 1


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_value(raw: str, annotation):
    raw = raw.strip()
    if annotation is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    if annotation is str:
        return raw
    if typing.get_origin(annotation) is tuple:
        (item_type, _) = typing.get_args(annotation)
        parts = [p for p in raw.replace(" ", "").split(",") if p]
        return tuple(_parse_value(p, item_type) for p in parts)
    raise ValueError(f"unsupported field type {annotation!r}")


def apply_settings(config: RunConfig, items: Sequence[Tuple[str, str]], source: str) -> List[str]:
    """Assign key/value pairs in place; returns field-level error messages."""
    messages = []
    for key, raw in items:
        if "." not in key:
            messages.append(f"{source}: {key!r} is not of the form section.key")
            continue
        section_name, field_name = key.split(".", 1)
        section = getattr(config, section_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            messages.append(f"{source}: unknown section {section_name!r} in {key!r}")
            continue
        hints = typing.get_type_hints(type(section))
        if field_name not in hints:
            messages.append(f"{source}: unknown key {key!r}")
            continue
        try:
            setattr(section, field_name, _parse_value(raw, hints[field_name]))
        except ValueError as e:
            messages.append(f"{source}: {key}: {e}")
    return messages


def parse_lines(text: str, source: str) -> Tuple[List[Tuple[str, str]], List[str]]:
    items, messages = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            messages.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, value = stripped.split("=", 1)
        items.append((key.strip(), value.strip()))
    return items, messages


def apply_overrides(config: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """Copy of `config` with `key=value` overrides applied and validated."""
    updated = dataclasses.replace(
        config, **{name: dataclasses.replace(section) for name, section in config.sections()}
    )
    items, messages = parse_lines("\n".join(overrides), "--set")
    messages += apply_settings(updated, items, "--set")
    if messages:
        raise ConfigError(messages)
    updated.validate()
    return updated


def load_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional file, and overrides.

    Raises:
        ConfigError: with one message per bad field.
    """
    config = RunConfig()
    messages = []

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"--config: file not found: {path}"])
        items, parse_messages = parse_lines(path.read_text(encoding="utf-8"), str(path))
        messages += parse_messages
        messages += apply_settings(config, items, str(path))

    items, parse_messages = parse_lines("\n".join(overrides), "--set")
    messages += parse_messages
    messages += apply_settings(config, items, "--set")

    if seed is not None:
        config.run.seed = int(seed)

    if messages:
        raise ConfigError(messages)

    config.validate()
    logger.debug(f"Loaded config {config.config_hash[:12]}")
    return config


def from_canonical(text: str) -> RunConfig:
    """Rebuild a config from its canonical rendering (checkpoint echo)."""
    config = RunConfig()
    items, messages = parse_lines(text, "canonical")
    messages += apply_settings(config, items, "canonical")
    if messages:
        raise ConfigError(messages)
    return config


DATA_SECTIONS = ("world.", "latent.", "data.", "run.seed=")


def data_hash(config: RunConfig) -> str:
    """Hash of the settings that determine generated datasets."""
    lines = [line for line in config.canonical().splitlines() if line.startswith(DATA_SECTIONS)]
    return hashlib.sha256(("\n".join(lines) + "\n").encode("utf-8")).hexdigest()
