"""
Interleaved sequence layout.

    IMG (patch placeholders) | TXT (prompt) | WM (tags + groups*K_wm slots)
    | GEO (tags + K_3d slots) | ACT (<answer> + answer tokens)

Latent segments are omitted when the run does not reason with them.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence

import numpy as np
import torch

from lastlab.config.run_config import RunConfig
from lastlab.tokenizer import vocab as V
from lastlab.tokenizer.codec import format_pairs
from lastlab.tokenizer.vocab import Vocabulary, accel_bucket, speed_bucket
from lastlab.utils.reliability import ConfigurationError
from lastlab.world.samples import SceneSample
from lastlab.world.scene import SceneRecord


class Segment(IntEnum):
    IMG = 0
    TXT = 1
    WM = 2
    GEO = 3
    ACT = 4
    PAD = 5


@dataclass(frozen=True)
class SequenceLayout:
    n_img: int
    n_txt: int
    wm_slots: int  # 0 when the WM segment is absent
    geo_slots: int  # 0 when the GEO segment is absent
    n_act: int  # <answer> plus answer tokens

    @property
    def n_wm(self) -> int:
        return self.wm_slots + 2 if self.wm_slots else 0

    @property
    def n_geo(self) -> int:
        return self.geo_slots + 2 if self.geo_slots else 0

    @property
    def length(self) -> int:
        return self.n_img + self.n_txt + self.n_wm + self.n_geo + self.n_act

    @property
    def wm_start(self) -> int:
        return self.n_img + self.n_txt

    @property
    def geo_start(self) -> int:
        return self.wm_start + self.n_wm

    @property
    def act_start(self) -> int:
        """Position of the <answer> tag."""
        return self.geo_start + self.n_geo

    def segments(self) -> np.ndarray:
        return np.concatenate([
            np.full(self.n_img, int(Segment.IMG)),
            np.full(self.n_txt, int(Segment.TXT)),
            np.full(self.n_wm, int(Segment.WM)),
            np.full(self.n_geo, int(Segment.GEO)),
            np.full(self.n_act, int(Segment.ACT)),
        ]).astype(np.int64)

    def wm_slot_positions(self) -> np.ndarray:
        return self.wm_start + 1 + np.arange(self.wm_slots)

    def geo_slot_positions(self) -> np.ndarray:
        return self.geo_start + 1 + np.arange(self.geo_slots)


@dataclass(eq=False)
class SceneInputs:
    """Everything the policy conditions on for one decision."""

    raster: np.ndarray  # (3, H, W)
    prompt: List[str]  # TXT tokens
    ego_speed: float


@dataclass(eq=False)
class TokenSequence:
    token_ids: np.ndarray  # (L,)
    segments: np.ndarray  # (L,)
    slot_index: np.ndarray  # (L,), -1 outside latent slots
    layout: SequenceLayout
    raster: np.ndarray


def prompt_tokens(scene: SceneRecord, config: RunConfig) -> List[str]:
    w = config.world
    history = format_pairs(scene.history[:, :2])
    return [
        V.BOS,
        scene.instruction,
        V.speed_token(speed_bucket(scene.ego_state.velocity, w.speed_buckets, w.max_speed)),
        V.accel_token(accel_bucket(scene.ego_state.acceleration, w.accel_buckets, w.max_accel)),
    ] + list(history)


def scene_inputs(sample: SceneSample, config: RunConfig) -> SceneInputs:
    return SceneInputs(
        raster=sample.raster,
        prompt=prompt_tokens(sample.scene, config),
        ego_speed=float(sample.scene.ego_state.velocity),
    )


def n_patches(config: RunConfig) -> int:
    return (config.world.grid_size // config.policy.patch_size) ** 2


def wm_slot_count(config: RunConfig) -> int:
    return config.latent.wm_groups * config.latent.n_wm if config.uses_wm else 0


def geo_slot_count(config: RunConfig) -> int:
    return config.latent.n_3d if config.uses_geo else 0


def build_sequence(
    inputs: SceneInputs,
    config: RunConfig,
    vocab: Vocabulary,
    answer: Optional[Sequence[str]] = None,
) -> TokenSequence:
    """
    Token ids and segment labels for one decision.

    Without `answer` the sequence ends at <answer> (the generation prompt);
    otherwise `answer` lists the tokens after <answer>.
    """
    answer = list(answer or [])
    if answer and answer[0] == V.ANSWER_START:
        answer = answer[1:]
    layout = SequenceLayout(
        n_img=n_patches(config),
        n_txt=len(inputs.prompt),
        wm_slots=wm_slot_count(config),
        geo_slots=geo_slot_count(config),
        n_act=1 + len(answer),
    )

    tokens = [V.IMG] * layout.n_img + list(inputs.prompt)
    if layout.wm_slots:
        tokens += [V.WM_START] + [V.LATENT] * layout.wm_slots + [V.WM_END]
    if layout.geo_slots:
        tokens += [V.GEO_START] + [V.LATENT] * layout.geo_slots + [V.GEO_END]
    tokens += [V.ANSWER_START] + answer

    if len(tokens) > config.policy.max_len:
        raise ConfigurationError(f"sequence length {len(tokens)} exceeds policy.max_len={config.policy.max_len}")

    slot_index = np.full(layout.length, -1, dtype=np.int64)
    slot_index[layout.wm_slot_positions()] = np.arange(layout.wm_slots)
    total_wm = config.latent.wm_groups * config.latent.n_wm
    slot_index[layout.geo_slot_positions()] = total_wm + np.arange(layout.geo_slots)

    return TokenSequence(
        token_ids=np.array(vocab.encode(tokens), dtype=np.int64),
        segments=layout.segments(),
        slot_index=slot_index,
        layout=layout,
        raster=np.asarray(inputs.raster, dtype=np.float32),
    )


@dataclass(eq=False)
class SequenceBatch:
    token_ids: torch.Tensor  # (B, L) long
    segments: torch.Tensor  # (B, L) long
    slot_index: torch.Tensor  # (B, L) long
    raster: torch.Tensor  # (B, 3, H, W)
    lengths: torch.Tensor  # (B,)
    act_start: torch.Tensor  # (B,)
    wm_positions: Optional[torch.Tensor]  # (B, wm_slots)
    geo_positions: Optional[torch.Tensor]  # (B, geo_slots)
    layouts: List[SequenceLayout] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    def latent_positions(self) -> Optional[torch.Tensor]:
        parts = [p for p in (self.wm_positions, self.geo_positions) if p is not None]
        return torch.cat(parts, dim=1) if parts else None


def collate(sequences: Sequence[TokenSequence], pad_id: int, dtype: torch.dtype = torch.float32) -> SequenceBatch:
    """Right-pad sequences into one batch."""
    if not sequences:
        raise ConfigurationError("cannot collate an empty batch")
    length = max(len(s.token_ids) for s in sequences)
    size = len(sequences)

    ids = torch.full((size, length), pad_id, dtype=torch.long)
    segments = torch.full((size, length), int(Segment.PAD), dtype=torch.long)
    slots = torch.full((size, length), -1, dtype=torch.long)
    for i, seq in enumerate(sequences):
        n = len(seq.token_ids)
        ids[i, :n] = torch.from_numpy(seq.token_ids)
        segments[i, :n] = torch.from_numpy(seq.segments)
        slots[i, :n] = torch.from_numpy(seq.slot_index)

    layouts = [s.layout for s in sequences]
    wm = geo = None
    if layouts[0].wm_slots:
        wm = torch.from_numpy(np.stack([l.wm_slot_positions() for l in layouts])).long()
    if layouts[0].geo_slots:
        geo = torch.from_numpy(np.stack([l.geo_slot_positions() for l in layouts])).long()

    return SequenceBatch(
        token_ids=ids,
        segments=segments,
        slot_index=slots,
        raster=torch.from_numpy(np.stack([s.raster for s in sequences])).to(dtype),
        lengths=torch.tensor([len(s.token_ids) for s in sequences], dtype=torch.long),
        act_start=torch.tensor([l.act_start for l in layouts], dtype=torch.long),
        wm_positions=wm,
        geo_positions=geo,
        layouts=layouts,
    )
