"""
Dynamics and geometry adapters.

Each adapter is one cross-attention block (latent states query the masked
visual embeddings) followed by a two-layer MLP into teacher feature space.
"""

import logging
from typing import Optional

import torch
import torch.nn as nn

from lastlab.config.run_config import RunConfig
from lastlab.policy.layout import n_patches
from lastlab.utils.reliability import ConfigurationError

logger = logging.getLogger(__name__)


class LatentAdapter(nn.Module):
    def __init__(self, d_model: int, d_t: int, n_heads: int, n_keys: int, key_positional: bool = True):
        super().__init__()
        self.d_model = d_model
        self.n_keys = n_keys
        self.key_pos = nn.Parameter(torch.zeros(n_keys, d_model)) if key_positional else None
        self.ln_q = nn.LayerNorm(d_model)
        self.ln_kv = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.GELU(),
            nn.Linear(d_model, d_t),
        )
        if self.key_pos is not None:
            nn.init.normal_(self.key_pos, std=0.02)

    def _check(self, h: torch.Tensor, e: torch.Tensor) -> None:
        if h.dim() != 3 or e.dim() != 3:
            raise ConfigurationError(f"adapter expects batched inputs, got {tuple(h.shape)} and {tuple(e.shape)}")
        if h.shape[-1] != self.d_model or e.shape[-1] != self.d_model:
            raise ConfigurationError(f"adapter width {self.d_model} does not match inputs")
        if h.shape[0] != e.shape[0]:
            raise ConfigurationError("latent and visual batches differ in size")
        if self.key_pos is not None and e.shape[1] != self.n_keys:
            raise ConfigurationError(f"expected {self.n_keys} visual keys, got {e.shape[1]}")

    def forward(self, h: torch.Tensor, e_masked: torch.Tensor) -> torch.Tensor:
        """(B, K, d) latents and (B, N_p, d) visual embeddings -> (B, K, d_t)."""
        self._check(h, e_masked)
        keys = e_masked + self.key_pos if self.key_pos is not None else e_masked
        keys = self.ln_kv(keys)
        attended, _ = self.attn(self.ln_q(h), keys, keys, need_weights=False)
        return self.mlp(h + attended)


class GeometryAdapter(LatentAdapter):
    pass


class DynamicsAdapter(LatentAdapter):
    """Shared weights across horizon groups."""

    def forward(self, h_dyn: torch.Tensor, e_masked: torch.Tensor) -> torch.Tensor:
        """(B, G, K, d) latents -> (B, G, K, d_t)."""
        if h_dyn.dim() != 4:
            raise ConfigurationError(f"dynamics adapter expects (B, G, K, d), got {tuple(h_dyn.shape)}")
        b, groups, k, d = h_dyn.shape
        flat = h_dyn.reshape(b * groups, k, d)
        keys = e_masked.repeat_interleave(groups, dim=0)
        out = super().forward(flat, keys)
        return out.view(b, groups, k, -1)


class AdapterPair(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        d, d_t = config.policy.d_model, config.world.feature_dim
        a = config.adapters
        n_keys = n_patches(config)
        self.geo = GeometryAdapter(d, d_t, a.n_heads, n_keys, a.key_positional)
        self.dyn = DynamicsAdapter(d, d_t, a.n_heads, n_keys, a.key_positional)


def geometry_adapter(h_geo: torch.Tensor, e_masked: torch.Tensor, params: GeometryAdapter) -> torch.Tensor:
    """p_geo for one scene (K_3d, d) or a batch (B, K_3d, d)."""
    single = h_geo.dim() == 2
    if single:
        h_geo, e_masked = h_geo.unsqueeze(0), e_masked.unsqueeze(0)
    out = params(h_geo, e_masked)
    return out[0] if single else out


def dynamics_adapter(h_dyn: torch.Tensor, e_masked: torch.Tensor, params: DynamicsAdapter) -> torch.Tensor:
    """p_dyn for one scene (G, K_wm, d) or a batch (B, G, K_wm, d)."""
    single = h_dyn.dim() == 3
    if single:
        h_dyn, e_masked = h_dyn.unsqueeze(0), e_masked.unsqueeze(0)
    out = params(h_dyn, e_masked)
    return out[0] if single else out


def adapter_outputs(adapters: AdapterPair, h_geo: Optional[torch.Tensor], h_dyn: Optional[torch.Tensor],
                    e_masked: torch.Tensor):
    """(p_geo, p_dyn); either is None when that latent segment is absent."""
    p_geo = adapters.geo(h_geo, e_masked) if h_geo is not None else None
    p_dyn = adapters.dyn(h_dyn, e_masked) if h_dyn is not None else None
    return p_geo, p_dyn
