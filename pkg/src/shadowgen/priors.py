"""Visibility prior assembly: illumination recovered from the Lambertian
model on the sample's intrinsic maps (the synthetic stand-in for a learned
estimator), rendered as a sphere-shaded light image, plus a depth map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import depth as depth_mod
from .data import LoadedSample
from .sh import render_light_map, shade, solve_illumination


@dataclass
class PriorBundle:
    light_map: np.ndarray  # (H, W, 3) in [0, 1], aligned to the composite
    depth_map: np.ndarray  # (H, W) in [0, 1]


def extract_priors(
    sample: LoadedSample,
    depth_mode: str = "oracle",
    depth_command: str | None = None,
    depth_endpoint: str | None = None,
) -> PriorBundle:
    """Solve the image-formation model on the sample's intrinsic maps for SH
    illumination and render it; fetch depth from the configured provider.

    Pixels where the model's irradiance was clamped during rendering (object
    backsides) are excluded from the solve so the recovery stays exact.
    """
    # Two-pass solve: the first fit flags pixels whose irradiance the renderer
    # would have clamped (object backsides); the refit excludes them.
    first = solve_illumination(sample.composite, sample.albedo, sample.shadow_weight,
                               sample.normals)
    irr = shade(sample.normals.astype(np.float64), first.coeffs)
    valid = np.all(irr > 1e-4, axis=-1)
    if valid.sum() >= 64:
        refined = solve_illumination(sample.composite, sample.albedo, sample.shadow_weight,
                                     sample.normals, valid_mask=valid)
    else:
        refined = first
    resolution = sample.composite.shape[0]
    light_map = render_light_map(refined.coeffs, resolution).astype(np.float32)
    depth_map = depth_mod.estimate_depth(
        sample.composite, depth_mode, gt_depth=sample.gt_depth,
        command=depth_command, endpoint=depth_endpoint,
    ).astype(np.float32)
    return PriorBundle(light_map=light_map, depth_map=depth_map)
