"""High-frequency guidance: edge and texture cues extracted from shallow
encoder features and residually injected into late decoder features.

Extraction: Gaussian smoothing (filters local pseudo-texture), Sobel gradient
magnitude with an epsilon stabilizer inside the root, a 4-neighbor Laplacian
for thin structures, then per-channel spatial max-abs normalization clamped
at zero. Adaptation: a 1x1 projection to the decoder's channel count,
bilinear resize, channel+spatial attention reweighting, and a residual add
scaled by a learnable strength that starts at zero (exact identity at init).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gating import ConfigurationError

SOBEL_EPS = 1e-6

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.t().contiguous()
_LAPLACIAN = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def gaussian_kernel(kernel_size: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    if kernel_size % 2 == 0:
        raise ConfigurationError(f"Gaussian kernel size must be odd, got {kernel_size}")
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    half = kernel_size // 2
    coords = torch.arange(-half, half + 1, dtype=torch.float64)
    one_d = torch.exp(-coords**2 / (2.0 * sigma**2))
    kernel = (one_d[:, None] * one_d[None, :]).to(dtype)
    return kernel / kernel.sum()


def _depthwise(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    channels = x.shape[1]
    k = kernel.to(x.dtype).to(x.device).expand(channels, 1, *kernel.shape)
    pad = kernel.shape[-1] // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    return F.conv2d(x, k, groups=channels)


def gaussian_smooth(features: torch.Tensor, kernel_size: int = 3, sigma: float = 1.0) -> torch.Tensor:
    return _depthwise(features, gaussian_kernel(kernel_size, sigma))


def sobel_gradients(features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return _depthwise(features, _SOBEL_X), _depthwise(features, _SOBEL_Y)


def gradient_magnitude(features: torch.Tensor, eps: float = SOBEL_EPS) -> torch.Tensor:
    gx, gy = sobel_gradients(features)
    return torch.sqrt(gx * gx + gy * gy + eps)


def laplacian(features: torch.Tensor) -> torch.Tensor:
    return _depthwise(features, _LAPLACIAN)


def highfreq_extract(features: torch.Tensor, alpha: float = 0.5,
                     kernel_size: int = 3, sigma: float = 1.0,
                     eps: float = SOBEL_EPS) -> torch.Tensor:
    """Nonnegative per-channel high-frequency map, spatially max-normalized.

    A constant input yields a constant map of ~1 (the normalized sqrt(eps)
    floor), since max normalization of a constant is the constant itself.
    """
    smoothed = gaussian_smooth(features, kernel_size, sigma)
    magnitude = gradient_magnitude(smoothed, eps)
    raw = magnitude + alpha * laplacian(smoothed)
    max_abs = raw.abs().amax(dim=(-2, -1), keepdim=True)
    return (raw / (max_abs + 1e-8)).clamp_min(0.0)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        peak = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + peak)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM(nn.Module):
    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(spatial_kernel)

    def forward(self, x):
        x = x * self.channel(x)
        return x * self.spatial(x)


class HighFreqGuidance(nn.Module):
    """decoder_features + strength * CBAM(project(highfreq(encoder_features))).

    ``strength`` is a learnable scalar initialized at zero, so the module is
    an exact identity until training moves it.
    """

    def __init__(self, enc_channels: int, dec_channels: int, alpha: float = 0.5,
                 kernel_size: int = 3, sigma: float = 1.0):
        super().__init__()
        self.alpha = alpha
        self.kernel_size = kernel_size
        self.sigma = sigma
        self.project = nn.Conv2d(enc_channels, dec_channels, 1)
        self.cbam = CBAM(dec_channels)
        self.strength = nn.Parameter(torch.zeros(()))

    def forward(self, dec_features: torch.Tensor, enc_features: torch.Tensor) -> torch.Tensor:
        high = highfreq_extract(enc_features, self.alpha, self.kernel_size, self.sigma)
        guidance = self.project(high)
        if guidance.shape[-2:] != dec_features.shape[-2:]:
            guidance = F.interpolate(guidance, size=dec_features.shape[-2:],
                                     mode="bilinear", align_corners=False)
        if guidance.shape[1] != dec_features.shape[1]:
            raise ConfigurationError("projected guidance channels do not match decoder features")
        return dec_features + self.strength * self.cbam(guidance)
