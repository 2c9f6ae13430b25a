"""
Latent planner: a small pre-norm causal transformer over the interleaved
IMG | TXT | WM | GEO | ACT sequence.

Image patches enter through a linear patch embedding, latent slots through
learned slot embeddings (or, with latent feedback, the previous position's
final hidden state), and discrete tokens through the token embedding that
is tied to the output head.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from lastlab.config.run_config import RunConfig
from lastlab.policy.layout import SequenceBatch, n_patches
from lastlab.utils.reliability import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class LatentChain:
    h_dyn: Optional[torch.Tensor]  # (B, groups, K_wm, d)
    h_geo: Optional[torch.Tensor]  # (B, K_3d, d)


@dataclass(eq=False)
class PinnedStates:
    """Per-layer block outputs to impose at selected positions."""

    states: List[torch.Tensor]  # n_layers x (B, L, d)
    positions: torch.Tensor  # (B, L) bool


@dataclass(eq=False)
class PolicyOutput:
    logits: torch.Tensor  # (B, L, V)
    hidden: torch.Tensor  # (B, L, d), after the final norm
    latent: LatentChain
    e_img: torch.Tensor  # (B, N_p, d)
    attentions: List[torch.Tensor] = field(default_factory=list)  # (B, H, L, L) per layer
    layer_states: List[torch.Tensor] = field(default_factory=list)


class CausalSelfAttention(nn.Module):
    """Multi-head attention with an explicit boolean permission matrix."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ConfigurationError(f"n_heads={n_heads} does not divide d_model={d_model}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, allow: torch.Tensor):
        b, length, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        q = q.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)

        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allow.unsqueeze(1), float("-inf"))
        weights = torch.softmax(scores, dim=-1)

        out = (weights @ v).transpose(1, 2).reshape(b, length, d)
        return self.proj(out), weights


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, mlp_ratio * d_model),
            nn.GELU(),
            nn.Linear(mlp_ratio * d_model, d_model),
        )

    def forward(self, x: torch.Tensor, allow: torch.Tensor):
        attn_out, weights = self.attn(self.ln1(x), allow)
        x = x + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, weights


class LatentPlanner(nn.Module):
    def __init__(self, config: RunConfig, vocab_size: int):
        super().__init__()
        p, lat = config.policy, config.latent
        self.config = config
        self.n_img = n_patches(config)
        self.patch_size = p.patch_size
        self.wm_groups = lat.wm_groups
        self.n_wm = lat.n_wm
        self.latent_feedback = p.latent_feedback

        self.patch_embed = nn.Linear(3 * p.patch_size * p.patch_size, p.d_model)
        self.tok_embed = nn.Embedding(vocab_size, p.d_model)
        self.pos_embed = nn.Parameter(torch.zeros(p.max_len, p.d_model))
        self.slot_embed = nn.Parameter(torch.zeros(lat.wm_groups * lat.n_wm + lat.n_3d, p.d_model))
        self.blocks = nn.ModuleList([Block(p.d_model, p.n_heads, p.mlp_ratio) for _ in range(p.n_layers)])
        self.ln_f = nn.LayerNorm(p.d_model)

        self.apply(self._init_weights)
        nn.init.normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.slot_embed, std=0.02)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    @property
    def dtype(self) -> torch.dtype:
        return self.tok_embed.weight.dtype

    def patchify(self, raster: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, N_p, 3*P*P), patches in row-major order."""
        b, c, h, w = raster.shape
        ps = self.patch_size
        if c != 3 or h % ps or w % ps or (h // ps) * (w // ps) != self.n_img:
            raise ConfigurationError(f"raster shape {tuple(raster.shape)} does not match the patch layout")
        x = raster.reshape(b, c, h // ps, ps, w // ps, ps)
        return x.permute(0, 2, 4, 1, 3, 5).reshape(b, self.n_img, c * ps * ps)

    def embed_patches(self, raster: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(self.patchify(raster.to(self.dtype)))

    def input_embeddings(self, batch: SequenceBatch, allow: torch.Tensor) -> torch.Tensor:
        """Position-free input embeddings; latent feedback is resolved here under `allow`."""
        ids = batch.token_ids
        if ids.shape[1] > self.pos_embed.shape[0]:
            raise ConfigurationError(f"sequence length {ids.shape[1]} exceeds max_len {self.pos_embed.shape[0]}")
        x = self.tok_embed(ids)
        e_img = self.embed_patches(batch.raster)
        x = torch.cat([e_img, x[:, self.n_img:]], dim=1)

        slots = batch.slot_index
        is_slot = (slots >= 0).unsqueeze(-1)
        x = torch.where(is_slot, self.slot_embed[slots.clamp(min=0)], x)

        if self.latent_feedback:
            x = self._resolve_feedback(x, batch, allow)
        return x

    def _resolve_feedback(self, x: torch.Tensor, batch: SequenceBatch, allow: torch.Tensor) -> torch.Tensor:
        """
        Each latent slot takes the final hidden state of the position before it.

        The passes use the caller's mask, so a slot never reads a hidden state
        that was computed from positions the mask hides from it.
        """
        positions = batch.latent_positions()
        if positions is None:
            return x
        rows = torch.arange(x.shape[0], device=x.device)
        for j in range(positions.shape[1]):
            hidden = self.run(x, allow).hidden
            pos = positions[:, j]
            x = x.clone()
            x[rows, pos] = hidden[rows, pos - 1]
        return x

    def run(
        self,
        inputs: torch.Tensor,
        allow: torch.Tensor,
        e_img: Optional[torch.Tensor] = None,
        batch: Optional[SequenceBatch] = None,
        return_attention: bool = False,
        record_states: bool = False,
        pin: Optional[PinnedStates] = None,
    ) -> PolicyOutput:
        """Transformer stack over precomputed input embeddings."""
        length = inputs.shape[1]
        if allow.shape[-1] != length or allow.shape[-2] != length:
            raise ConfigurationError(f"mask shape {tuple(allow.shape)} does not match sequence length {length}")
        if allow.dim() == 2:
            allow = allow.unsqueeze(0).expand(inputs.shape[0], length, length)

        x = inputs + self.pos_embed[:length]
        attentions, states = [], []
        for i, block in enumerate(self.blocks):
            x, weights = block(x, allow)
            if pin is not None:
                x = torch.where(pin.positions.unsqueeze(-1), pin.states[i], x)
            if return_attention:
                attentions.append(weights)
            if record_states:
                states.append(x)

        hidden = self.ln_f(x)
        logits = hidden @ self.tok_embed.weight.t()
        latent = self._latent_chain(hidden, batch) if batch is not None else LatentChain(None, None)
        if e_img is None:
            e_img = inputs[:, : self.n_img]
        return PolicyOutput(
            logits=logits,
            hidden=hidden,
            latent=latent,
            e_img=e_img,
            attentions=attentions,
            layer_states=states,
        )

    def forward(
        self,
        batch: SequenceBatch,
        allow: torch.Tensor,
        return_attention: bool = False,
        record_states: bool = False,
        pin: Optional[PinnedStates] = None,
    ) -> PolicyOutput:
        inputs = self.input_embeddings(batch, allow)
        e_img = inputs[:, : self.n_img]
        return self.run(
            inputs,
            allow,
            e_img=e_img,
            batch=batch,
            return_attention=return_attention,
            record_states=record_states,
            pin=pin,
        )

    def _latent_chain(self, hidden: torch.Tensor, batch: SequenceBatch) -> LatentChain:
        h_dyn = h_geo = None
        d = hidden.shape[-1]
        if batch.wm_positions is not None:
            idx = batch.wm_positions.unsqueeze(-1).expand(-1, -1, d)
            h_dyn = hidden.gather(1, idx).view(hidden.shape[0], self.wm_groups, self.n_wm, d)
        if batch.geo_positions is not None:
            idx = batch.geo_positions.unsqueeze(-1).expand(-1, -1, d)
            h_geo = hidden.gather(1, idx)
        return LatentChain(h_dyn=h_dyn, h_geo=h_geo)


def restricted_log_probs(logits: torch.Tensor, content_ids: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Log-softmax over the answer alphabet only, at the given temperature."""
    return F.log_softmax(logits.index_select(-1, content_ids) / temperature, dim=-1)
