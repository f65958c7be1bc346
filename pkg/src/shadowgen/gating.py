"""Gated cross-attention injection of control features into denoiser
feature maps at registered anchor points.

The attention treats spatial positions as tokens: queries come from the
denoiser feature map, keys and values from the control feature map at the
same resolution. A per-pixel, per-channel sigmoid gate predicted from the
control features modulates the attention output before the residual add, so
the injection can be suppressed where the priors are unhelpful.

The value projection (weight and bias) and the gate convolution are
zero-initialized: paired with zero-initialized control taps the whole
injection is an exact no-op at the start of training. The value bias is the
trainable escape hatch that lets gradients reach the control branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorSpec:
    """One of exactly three injection anchors in the denoiser.

    ``scale_divisor`` relates the anchor's spatial size to the model input
    (1 = full resolution). Names refer to depth positions: "early" is the end
    of the encoder, "mid" the bottleneck, "late" the last decoder block.
    """

    name: str
    channels: int
    scale_divisor: int
    heads: int


class CrossAttention2d(nn.Module):
    """Multi-head attention between two aligned feature maps.

    Tokens are spatial positions; output is projected back to the query
    map's channel count and reshaped to its spatial layout.
    """

    def __init__(self, x_channels: int, c_channels: int, heads: int,
                 zero_init_value: bool = False):
        super().__init__()
        if x_channels % heads != 0:
            raise ConfigurationError(
                f"heads ({heads}) must divide feature channels ({x_channels})"
            )
        self.heads = heads
        self.head_dim = x_channels // heads
        self.to_q = nn.Linear(x_channels, x_channels)
        self.to_k = nn.Linear(c_channels, x_channels)
        self.to_v = nn.Linear(c_channels, x_channels)
        self.to_out = nn.Linear(x_channels, x_channels, bias=False)
        if zero_init_value:
            nn.init.zeros_(self.to_v.weight)
            nn.init.zeros_(self.to_v.bias)

    def forward(self, x_map: torch.Tensor, c_map: torch.Tensor) -> torch.Tensor:
        b, ch, h, w = x_map.shape
        if c_map.shape[-2:] != (h, w):
            raise ConfigurationError(
                f"control map {tuple(c_map.shape[-2:])} does not match feature map {(h, w)}"
            )
        n = h * w
        x_tok = x_map.flatten(2).transpose(1, 2)  # (B, N, Cx)
        c_tok = c_map.flatten(2).transpose(1, 2)  # (B, N, Cc)

        def split(tensor):
            return tensor.view(b, n, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.to_q(x_tok))
        k = split(self.to_k(c_tok))
        v = split(self.to_v(c_tok))
        scores = q @ k.transpose(-2, -1) / self.head_dim**0.5
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, ch)
        out = self.to_out(out)
        return out.transpose(1, 2).reshape(b, ch, h, w)


class ShadowGate(nn.Module):
    """Per-pixel, per-channel gate in (0, 1): dropout, 3x3 convolution,
    sigmoid. Zero-initialized, so the gate starts neutral at 0.5."""

    def __init__(self, c_channels: int, x_channels: int, dropout: float = 0.1):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.conv = nn.Conv2d(c_channels, x_channels, kernel_size=3, padding=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, c_map: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(self.dropout(c_map)))


class GatedCrossAttention(nn.Module):
    """x + gate(c) * cross_attention(x, c), the full anchor injection."""

    def __init__(self, x_channels: int, c_channels: int, heads: int, dropout: float = 0.1):
        super().__init__()
        self.attention = CrossAttention2d(x_channels, c_channels, heads, zero_init_value=True)
        self.gate = ShadowGate(c_channels, x_channels, dropout)

    def forward(self, x_map: torch.Tensor, c_map: torch.Tensor) -> torch.Tensor:
        injected = self.attention(x_map, c_map)
        if injected.shape != x_map.shape:
            raise ConfigurationError("attention output shape does not match the feature map")
        return x_map + self.gate(c_map) * injected
