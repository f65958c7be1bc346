"""Image-space diffusion: linear noise schedule, closed-form forward
corruption, noise-to-sample inversion, ancestral sampling, and the training
step that assembles the stage-2 losses from one denoising pass.

Targets are 4-channel tensors (3 image + 1 mask) scaled to [-1, 1]. The
model predicts noise; reconstruction-space losses convert the prediction to
a clean-target estimate through the closed-form inversion first.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .gating import ConfigurationError
from .losses import LossWeights, stage2_loss


@dataclass
class DiffusionSchedule:
    betas: torch.Tensor       # (T,) float64
    alphas: torch.Tensor      # 1 - betas
    alpha_bars: torch.Tensor  # cumulative products

    def __post_init__(self):
        b = self.betas
        if b.dim() != 1 or b.numel() < 1:
            raise ConfigurationError("betas must be a 1-D tensor")
        if not torch.all((b > 0) & (b < 1)):
            raise ConfigurationError("betas must lie in (0, 1)")
        if b.numel() > 1 and not torch.all(b[1:] >= b[:-1]):
            raise ConfigurationError("betas must be non-decreasing")
        if not torch.all(self.alpha_bars[1:] < self.alpha_bars[:-1]):
            raise ConfigurationError("alpha_bar must be strictly decreasing")
        if self.alpha_bars[-1] >= 0.01:
            raise ConfigurationError(
                f"alpha_bar at the final step is {float(self.alpha_bars[-1]):.4f}; "
                "choose more steps or a larger beta_end so it drops below 0.01"
            )

    @property
    def timesteps(self) -> int:
        return self.betas.numel()

    @classmethod
    def linear(cls, timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.05):
        betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64)
        alphas = 1.0 - betas
        return cls(betas=betas, alphas=alphas, alpha_bars=torch.cumprod(alphas, dim=0))

    def coefs_at(self, t: torch.Tensor, dtype, device):
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) for 1-indexed t."""
        if torch.any(t < 1) or torch.any(t > self.timesteps):
            raise ConfigurationError(f"t must lie in [1, {self.timesteps}]")
        ab = self.alpha_bars.to(device)[t - 1]
        return (ab.sqrt().to(dtype)[:, None, None, None],
                (1.0 - ab).sqrt().to(dtype)[:, None, None, None])


def forward_diffuse(x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor,
                    schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise."""
    a, b = schedule.coefs_at(t, x0.dtype, x0.device)
    return a * x0 + b * noise


def invert_to_x0(x_t: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                 schedule: DiffusionSchedule) -> torch.Tensor:
    """Closed-form inverse of forward_diffuse given the noise."""
    a, b = schedule.coefs_at(t, x_t.dtype, x_t.device)
    return (x_t - b * eps) / a


def ancestral_sample(
    model,
    condition: torch.Tensor,
    control,
    schedule: DiffusionSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    """Full T-step ancestral sampling; returns the raw 4-channel clean-target
    estimate in [-1, 1] space (unclamped)."""
    b = condition.shape[0]
    device = condition.device
    shape = (b, model.TARGET_CHANNELS, *condition.shape[-2:])
    x = torch.randn(shape, generator=generator, device=device)
    for step in range(schedule.timesteps, 0, -1):
        t = torch.full((b,), step, dtype=torch.long, device=device)
        eps = model(x, t, condition, control)
        beta = float(schedule.betas[step - 1])
        alpha = float(schedule.alphas[step - 1])
        alpha_bar = float(schedule.alpha_bars[step - 1])
        mean = (x - beta / (1.0 - alpha_bar) ** 0.5 * eps) / alpha**0.5
        if step > 1:
            alpha_bar_prev = float(schedule.alpha_bars[step - 2])
            var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
            x = mean + var**0.5 * torch.randn(shape, generator=generator, device=device)
        else:
            x = mean
    return x


def split_outputs(x0_raw: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Final sampling outputs: image rescaled to [0, 1] and clamped, mask
    channel through a sigmoid (threshold 0.5 matches raw 0)."""
    image = ((x0_raw[:, :3] + 1.0) * 0.5).clamp(0.0, 1.0)
    mask = torch.sigmoid(x0_raw[:, 3:4])
    return image, mask


def scale_to_model(image01: torch.Tensor) -> torch.Tensor:
    return image01 * 2.0 - 1.0


def scale_from_model(signal: torch.Tensor) -> torch.Tensor:
    return (signal + 1.0) * 0.5


def diffusion_train_step(
    model,
    schedule: DiffusionSchedule,
    x0: torch.Tensor,
    condition: torch.Tensor,
    control,
    prior_map: torch.Tensor | None,
    weights: LossWeights,
    generator: torch.Generator,
) -> dict[str, torch.Tensor]:
    """One denoising training step: sample t and noise, corrupt, predict,
    invert to the clean-target estimate, and assemble the stage-2 losses.
    """
    if x0.numel() == 0:
        raise ConfigurationError("empty batch")
    b = x0.shape[0]
    t = torch.randint(1, schedule.timesteps + 1, (b,), generator=generator, device=x0.device)
    noise = torch.randn(x0.shape, generator=generator, device=x0.device, dtype=x0.dtype)
    x_t = forward_diffuse(x0, t, noise, schedule)
    eps_pred = model(x_t, t, condition, control)
    x0_hat = invert_to_x0(x_t, t, eps_pred, schedule)
    pred_image = scale_from_model(x0_hat[:, :3])
    pred_mask = scale_from_model(x0_hat[:, 3:4])
    gt_image = scale_from_model(x0[:, :3])
    gt_mask = scale_from_model(x0[:, 3:4])
    losses = stage2_loss(eps_pred, noise, pred_image, gt_image, pred_mask, gt_mask,
                         prior_map, weights)
    losses["t"] = t
    return losses
