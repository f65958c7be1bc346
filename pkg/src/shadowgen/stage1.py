"""Coarse foreground-shadow mask prediction.

Two 4-level strided conv encoders with shared architecture: the background
encoder reads (composite, background shadow mask), the foreground encoder
reads (composite, foreground object mask). Their bottleneck features
interact through cross-attention (foreground as queries, background as
keys/values) and a conv decoder emits the sigmoid mask. The combined mask is
the elementwise union (max) with the object mask.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gating import ConfigurationError, CrossAttention2d

BCE_CLAMP = 1e-7
DICE_SMOOTHING = 1.0


def _conv(in_ch, out_ch, stride=1):
    # Reflect padding keeps spatially constant inputs exactly constant.
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="reflect")


class _Encoder(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        w = width
        self.levels = nn.Sequential(
            _conv(4, w), nn.SiLU(),
            _conv(w, 2 * w, stride=2), nn.SiLU(),
            _conv(2 * w, 4 * w, stride=2), nn.SiLU(),
            _conv(4 * w, 8 * w, stride=2), nn.SiLU(),
        )

    def forward(self, x):
        return self.levels(x)


class CoarseMaskNet(nn.Module):
    def __init__(self, width: int = 16, heads: int = 4):
        super().__init__()
        self.bg_encoder = _Encoder(width)
        self.fg_encoder = _Encoder(width)
        bottleneck = 8 * width
        self.attention = CrossAttention2d(bottleneck, bottleneck, heads)
        w = width
        self.decoder = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            _conv(8 * w, 4 * w), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            _conv(4 * w, 2 * w), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            _conv(2 * w, w), nn.SiLU(),
            _conv(w, 1),
        )

    def forward(self, composite: torch.Tensor, bg_shadow_mask: torch.Tensor,
                fg_mask: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W), (B,1,H,W), (B,1,H,W) -> coarse mask (B,1,H,W) in [0,1]."""
        if composite.shape[1] != 3 or bg_shadow_mask.shape[1] != 1 or fg_mask.shape[1] != 1:
            raise ConfigurationError("expected 3-channel composite and 1-channel masks")
        bg_feat = self.bg_encoder(torch.cat([composite, bg_shadow_mask], dim=1))
        fg_feat = self.fg_encoder(torch.cat([composite, fg_mask], dim=1))
        fused = fg_feat + self.attention(fg_feat, bg_feat)
        return torch.sigmoid(self.decoder(fused))


def combine_masks(fg_mask: torch.Tensor, coarse_mask: torch.Tensor) -> torch.Tensor:
    """Union of the object mask and the predicted shadow mask."""
    if fg_mask.shape != coarse_mask.shape:
        raise ConfigurationError("mask shapes differ")
    return torch.maximum(fg_mask, coarse_mask)


def stage1_loss_components(coarse_mask: torch.Tensor,
                           gt_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(binary cross-entropy, Dice loss) against a binary ground truth."""
    if coarse_mask.shape != gt_mask.shape:
        raise ConfigurationError("mask shapes differ")
    if not torch.all((gt_mask == 0) | (gt_mask == 1)):
        raise ConfigurationError("ground-truth mask must be binary")
    p = coarse_mask.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -(gt_mask * torch.log(p) + (1.0 - gt_mask) * torch.log(1.0 - p)).mean()
    inter = (coarse_mask * gt_mask).sum()
    dice = 1.0 - (2.0 * inter + DICE_SMOOTHING) / (coarse_mask.sum() + gt_mask.sum() + DICE_SMOOTHING)
    return bce, dice


def stage1_loss(coarse_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    bce, dice = stage1_loss_components(coarse_mask, gt_mask)
    return bce + dice
