"""Residual control encoder: turns the stacked visibility priors (light map
and/or depth map) into per-anchor conditioning features.

Seven residual blocks, split 3/2/2 across full, half and quarter resolution
with stride-2 downsampling at the stage boundaries. Taps: after block 3 at
full resolution (the "late" anchor), after block 6 and block 7 at quarter
resolution (the "early" and "mid" anchors). Every tap goes through a
zero-initialized 1x1 projection, so all conditioning features are exactly
zero until training moves them.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .gating import AnchorSpec, ConfigurationError


@dataclass
class ControlFeatures:
    early: torch.Tensor
    mid: torch.Tensor
    late: torch.Tensor

    def at(self, name: str) -> torch.Tensor:
        return getattr(self, name)


class _ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        groups = 8 if in_ch % 8 == 0 else 1
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(8 if out_ch % 8 == 0 else 1, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class ControlEncoder(nn.Module):
    """Prior stack (B, in_channels, H, W) -> zero-initialized anchor taps."""

    def __init__(self, in_channels: int, anchors: dict[str, AnchorSpec], width: int = 32):
        super().__init__()
        expected = {"early", "mid", "late"}
        if set(anchors) != expected:
            raise ConfigurationError(f"anchors must be exactly {sorted(expected)}")
        if anchors["late"].scale_divisor != 1 or anchors["early"].scale_divisor != 4 \
                or anchors["mid"].scale_divisor != 4:
            raise ConfigurationError("tap schedule expects late at /1 and early/mid at /4")
        self.in_channels = in_channels
        w1, w2, w3 = width, width * 3 // 2, width * 2
        self.stem = nn.Conv2d(in_channels, w1, 3, padding=1)
        self.stage1 = nn.ModuleList([_ResidualBlock(w1, w1) for _ in range(3)])
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.stage2 = nn.ModuleList([_ResidualBlock(w2, w2) for _ in range(2)])
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.stage3 = nn.ModuleList([_ResidualBlock(w3, w3) for _ in range(2)])

        def zero_tap(in_ch, out_ch):
            tap = nn.Conv2d(in_ch, out_ch, 1)
            nn.init.zeros_(tap.weight)
            nn.init.zeros_(tap.bias)
            return tap

        self.tap_late = zero_tap(w1, anchors["late"].channels)
        self.tap_early = zero_tap(w3, anchors["early"].channels)
        self.tap_mid = zero_tap(w3, anchors["mid"].channels)

    def forward(self, priors: torch.Tensor) -> ControlFeatures:
        if priors.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"expected {self.in_channels} prior channels, got {priors.shape[1]}"
            )
        if priors.shape[-1] % 4 != 0 or priors.shape[-2] % 4 != 0:
            raise ConfigurationError("prior resolution must be divisible by 4")
        h = self.stem(priors)
        for block in self.stage1:
            h = block(h)
        late = self.tap_late(h)
        h = self.down1(h)
        for block in self.stage2:
            h = block(h)
        h = self.down2(h)
        h = self.stage3[0](h)
        early = self.tap_early(h)
        h = self.stage3[1](h)
        mid = self.tap_mid(h)
        return ControlFeatures(early=early, mid=mid, late=late)
