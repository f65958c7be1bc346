"""Stage-2 and joint objectives: pixel reconstruction base loss, the learned
spatial prior map with budget-preserving mean normalization, the
prior-weighted reconstruction term, and their compositions.

The prior map trains only through the weighted loss (no direct supervision);
mean normalization removes the trivial minimizer that shrinks the map toward
zero, because scaling the raw map leaves the normalized map unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .gating import ConfigurationError

MEAN_NORM_EPS = 1e-8


@dataclass
class LossWeights:
    mask_weight: float = 0.2        # weight of the squared mask term inside the base loss
    prior_weight: float = 0.5       # weight of the prior-weighted term in the stage-2 loss
    stage1_weight: float = 0.1      # weight of the stage-1 loss in the joint loss

    def __post_init__(self):
        if min(self.mask_weight, self.prior_weight, self.stage1_weight) < 0:
            raise ConfigurationError("loss weights must be nonnegative")


def base_loss(pred_image: torch.Tensor, gt_image: torch.Tensor,
              pred_mask: torch.Tensor, gt_mask: torch.Tensor,
              mask_weight: float = 0.2) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel L1 image error (summed over channels) plus weighted squared
    mask error. Returns (scalar mean, per-pixel map of shape (B, H, W))."""
    if pred_image.shape != gt_image.shape or pred_mask.shape != gt_mask.shape:
        raise ConfigurationError("prediction/target shapes differ")
    pixel_map = (pred_image - gt_image).abs().sum(dim=1)
    pixel_map = pixel_map + mask_weight * (pred_mask - gt_mask).pow(2).squeeze(1)
    return pixel_map.mean(), pixel_map


def mean_normalize(prior_map: torch.Tensor, eps: float = MEAN_NORM_EPS) -> torch.Tensor:
    """Divide by the per-sample spatial mean (plus eps). A constant map maps
    to ~1 everywhere; an all-zero map stays zero."""
    mean = prior_map.mean(dim=(-2, -1), keepdim=True)
    return prior_map / (mean + eps)


def prior_weighted_loss(normalized_prior: torch.Tensor, base_map: torch.Tensor) -> torch.Tensor:
    """Mean over pixels of normalized_prior * per-pixel base loss."""
    if normalized_prior.dim() == 4:
        normalized_prior = normalized_prior.squeeze(1)
    if normalized_prior.shape != base_map.shape:
        raise ConfigurationError("prior map and base-loss map shapes differ")
    return (normalized_prior * base_map).mean()


def stage2_loss(
    eps_pred: torch.Tensor,
    eps_true: torch.Tensor,
    pred_image: torch.Tensor,
    gt_image: torch.Tensor,
    pred_mask: torch.Tensor,
    gt_mask: torch.Tensor,
    prior_map: torch.Tensor | None,
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """Stage-2 objective: noise-prediction MSE (plumbing term, weight 1) plus
    the base reconstruction loss plus the prior-weighted term."""
    eps_mse = (eps_pred - eps_true).pow(2).mean()
    base, base_map = base_loss(pred_image, gt_image, pred_mask, gt_mask, weights.mask_weight)
    if prior_map is not None:
        weighted = prior_weighted_loss(mean_normalize(prior_map), base_map)
    else:
        weighted = torch.zeros((), dtype=base.dtype, device=base.device)
    total = eps_mse + base + weights.prior_weight * weighted
    return {"eps_mse": eps_mse, "base": base, "weighted": weighted, "total": total}


def joint_loss(stage2_total: torch.Tensor, stage1_value: torch.Tensor,
               stage1_weight: float) -> torch.Tensor:
    return stage2_total + stage1_weight * stage1_value


def _conv(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="reflect")


class PriorMapNet(nn.Module):
    """Lightweight two-level U-Net emitting the raw spatial prior in (0, 1)
    from concatenated visibility cues (light map, depth, object mask, coarse
    shadow mask). Trained end-to-end through the weighted loss only."""

    def __init__(self, in_channels: int = 6, width: int = 16):
        super().__init__()
        w = width
        self.enc0 = nn.Sequential(_conv(in_channels, w), nn.SiLU())
        self.down1 = nn.Sequential(_conv(w, 2 * w, stride=2), nn.SiLU())
        self.down2 = nn.Sequential(_conv(2 * w, 4 * w, stride=2), nn.SiLU())
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 _conv(4 * w, 2 * w), nn.SiLU())
        self.up0 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 _conv(2 * w, w), nn.SiLU())
        self.head = _conv(w, 1)
        self.in_channels = in_channels

    def forward(self, cues: torch.Tensor) -> torch.Tensor:
        if cues.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"expected {self.in_channels} cue channels, got {cues.shape[1]}"
            )
        e0 = self.enc0(cues)
        e1 = self.down1(e0)
        e2 = self.down2(e1)
        d1 = self.up1(e2) + e1
        d0 = self.up0(d1) + e0
        return torch.sigmoid(self.head(d0))
