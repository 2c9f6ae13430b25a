"""Random visual masking and the feature-alignment losses."""

from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from lastlab.utils.reliability import ConfigurationError


def visual_mask(e_img: torch.Tensor, ratio: float, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Zero whole patch rows independently with probability `ratio`.

    Surviving rows are not rescaled. Works on (N_p, d) or (B, N_p, d).
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"visual mask ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0:
        return e_img
    draws = torch.rand(e_img.shape[:-1], generator=generator, dtype=torch.float64)
    keep = (draws >= ratio).to(device=e_img.device, dtype=e_img.dtype)
    return e_img * keep.unsqueeze(-1)


def _mse(pred: Optional[torch.Tensor], target: Optional[torch.Tensor], name: str, like: torch.Tensor) -> torch.Tensor:
    if pred is None or target is None:
        return like.new_zeros(())
    if pred.shape != target.shape:
        raise ConfigurationError(f"{name}: prediction {tuple(pred.shape)} vs teacher {tuple(target.shape)}")
    return F.mse_loss(pred, target.to(pred.dtype), reduction="mean")


def alignment_losses(
    p_geo: Optional[torch.Tensor],
    p_dyn: Optional[torch.Tensor],
    f_geo: Optional[torch.Tensor],
    f_dyn: Optional[torch.Tensor],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean-squared alignment errors (l_3d, l_wm).

    A missing prediction (latent segment not in the layout) gives a zero loss.

    Raises:
        ConfigurationError: prediction and teacher shapes differ.
    """
    like = next(t for t in (p_geo, p_dyn, f_geo, f_dyn) if t is not None)
    l_3d = _mse(p_geo, f_geo, "l_3d", like)
    l_wm = _mse(p_dyn, f_dyn, "l_wm", like)
    return l_3d, l_wm
