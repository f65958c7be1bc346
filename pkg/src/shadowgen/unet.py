"""Conditional denoising U-Net.

Input: the noisy 4-channel target (3 image + 1 mask) concatenated with the
4-channel condition (composite + combined mask); output: the 4-channel noise
prediction. Three resolutions, two residual blocks per level, sinusoidal
timestep embedding through an MLP.

Injection anchors (exactly three): "early" after the last encoder block,
"mid" inside the bottleneck, "late" after the last decoder block; early/mid
sit at quarter resolution, late at full resolution. High-frequency guidance
reads the first encoder block's output (full resolution) and injects into
the late decoder features, after the late anchor.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .control import ControlFeatures
from .gating import AnchorSpec, ConfigurationError, GatedCrossAttention
from .highfreq import HighFreqGuidance


def kaiming_init(module: nn.Module) -> None:
    """Kaiming-normal init on conv/linear weights, zero biases. Layers marked
    with `_keep_init` (zero convolutions, gate heads, value projections) keep
    the init their constructor chose."""
    for m in module.modules():
        if getattr(m, "_keep_init", False):
            continue
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / (half - 1)
        )
        angles = t.double()[:, None] * freqs[None, :]
        return torch.cat([angles.sin(), angles.cos()], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        def groups(ch):
            return 8 if ch % 8 == 0 else 1
        self.norm1 = nn.GroupNorm(groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, temb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class ConditionalUNet(nn.Module):
    TARGET_CHANNELS = 4      # 3 image + 1 mask
    CONDITION_CHANNELS = 4   # 3 composite + 1 combined mask

    def __init__(
        self,
        base_width: int = 64,
        heads: int = 4,
        use_gated_injection: bool = False,
        use_highfreq: bool = False,
        gate_dropout: float = 0.1,
        hf_alpha: float = 0.5,
        hf_kernel: int = 3,
        hf_sigma: float = 1.0,
        control_channels: dict[str, int] | None = None,
    ):
        super().__init__()
        if base_width % 8 != 0:
            raise ConfigurationError("base_width must be a multiple of 8")
        w1, w2, w3 = base_width, 2 * base_width, 4 * base_width
        time_dim = 4 * base_width
        self.use_gated_injection = use_gated_injection
        self.use_highfreq = use_highfreq
        self.anchors = {
            "early": AnchorSpec("early", channels=w3, scale_divisor=4, heads=heads),
            "mid": AnchorSpec("mid", channels=w3, scale_divisor=4, heads=heads),
            "late": AnchorSpec("late", channels=w1, scale_divisor=1, heads=heads),
        }
        # Control features carry the same channel count as their anchor
        # unless overridden.
        self.control_channels = control_channels or {k: a.channels for k, a in self.anchors.items()}

        self.time_embed = nn.Sequential(
            SinusoidalEmbedding(base_width),
            nn.Linear(base_width, time_dim), nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )

        in_ch = self.TARGET_CHANNELS + self.CONDITION_CHANNELS
        self.conv_in = nn.Conv2d(in_ch, w1, 3, padding=1)
        self.enc0a = ResBlock(w1, w1, time_dim)
        self.enc0b = ResBlock(w1, w1, time_dim)
        self.down0 = nn.Conv2d(w1, w1, 3, stride=2, padding=1)
        self.enc1a = ResBlock(w1, w2, time_dim)
        self.enc1b = ResBlock(w2, w2, time_dim)
        self.down1 = nn.Conv2d(w2, w2, 3, stride=2, padding=1)
        self.enc2a = ResBlock(w2, w3, time_dim)
        self.enc2b = ResBlock(w3, w3, time_dim)

        self.mid_a = ResBlock(w3, w3, time_dim)
        self.mid_b = ResBlock(w3, w3, time_dim)

        self.dec2a = ResBlock(w3 + w3, w3, time_dim)
        self.dec2b = ResBlock(w3, w3, time_dim)
        self.up2 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(w3, w2, 3, padding=1))
        self.dec1a = ResBlock(w2 + w2, w2, time_dim)
        self.dec1b = ResBlock(w2, w2, time_dim)
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(w2, w1, 3, padding=1))
        self.dec0a = ResBlock(w1 + w1, w1, time_dim)
        self.dec0b = ResBlock(w1, w1, time_dim)

        self.head = nn.Sequential(
            nn.GroupNorm(8, w1), nn.SiLU(),
            nn.Conv2d(w1, self.TARGET_CHANNELS, 3, padding=1),
        )

        if use_gated_injection:
            self.inject_early = GatedCrossAttention(w3, self.control_channels["early"], heads, gate_dropout)
            self.inject_mid = GatedCrossAttention(w3, self.control_channels["mid"], heads, gate_dropout)
            self.inject_late = GatedCrossAttention(w1, self.control_channels["late"], heads, gate_dropout)
        if use_highfreq:
            self.highfreq = HighFreqGuidance(w1, w1, alpha=hf_alpha,
                                             kernel_size=hf_kernel, sigma=hf_sigma)
            # Injection site: full resolution (>= half of the input size).
            self.highfreq_site_divisor = 1

        kaiming_init(self)
        self._mark_zero_layers()

    def _mark_zero_layers(self):
        # Re-apply the structural zero inits that kaiming_init must respect
        # if callers re-run it on the whole model.
        if self.use_gated_injection:
            for inj in (self.inject_early, self.inject_mid, self.inject_late):
                inj.attention.to_v._keep_init = True
                inj.gate.conv._keep_init = True
                nn.init.zeros_(inj.attention.to_v.weight)
                nn.init.zeros_(inj.attention.to_v.bias)
                nn.init.zeros_(inj.gate.conv.weight)
                nn.init.zeros_(inj.gate.conv.bias)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, condition: torch.Tensor,
                control: ControlFeatures | None = None) -> torch.Tensor:
        if x_t.shape[1] != self.TARGET_CHANNELS:
            raise ConfigurationError(f"x_t must have {self.TARGET_CHANNELS} channels")
        if condition.shape[1] != self.CONDITION_CHANNELS:
            raise ConfigurationError(f"condition must have {self.CONDITION_CHANNELS} channels")
        if self.use_gated_injection and control is None:
            raise ConfigurationError("gated injection is enabled but no control features given")
        if not self.use_gated_injection and control is not None:
            raise ConfigurationError("control features given but gated injection is disabled")
        if x_t.shape[-1] % 4 != 0 or x_t.shape[-2] % 4 != 0:
            raise ConfigurationError("input resolution must be divisible by 4")

        temb = self.time_embed(t).to(x_t.dtype)
        h = self.conv_in(torch.cat([x_t, condition], dim=1))
        e0 = self.enc0a(h, temb)
        shallow = e0  # high-frequency source: first encoder block, full res
        e0 = self.enc0b(e0, temb)
        e1 = self.enc1a(self.down0(e0), temb)
        e1 = self.enc1b(e1, temb)
        e2 = self.enc2a(self.down1(e1), temb)
        e2 = self.enc2b(e2, temb)
        if self.use_gated_injection:
            e2 = self.inject_early(e2, control.early)

        m = self.mid_a(e2, temb)
        if self.use_gated_injection:
            m = self.inject_mid(m, control.mid)
        m = self.mid_b(m, temb)

        d2 = self.dec2a(torch.cat([m, e2], dim=1), temb)
        d2 = self.dec2b(d2, temb)
        d1 = self.dec1a(torch.cat([self.up2(d2), e1], dim=1), temb)
        d1 = self.dec1b(d1, temb)
        d0 = self.dec0a(torch.cat([self.up1(d1), e0], dim=1), temb)
        d0 = self.dec0b(d0, temb)
        if self.use_gated_injection:
            d0 = self.inject_late(d0, control.late)
        if self.use_highfreq:
            d0 = self.highfreq(d0, shallow)
        return self.head(d0)
