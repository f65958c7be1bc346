"""Second-order real spherical harmonics: basis evaluation, least-squares
illumination recovery from a Lambertian image model, and sphere-shaded
light-map rendering.

Basis order (9 functions): l=0; l=1 m=-1,0,1; l=2 m=-2,-1,0,1,2.
Normalization constants are the standard orthonormal real basis; the numeric
values are listed in GLOSSARY.md.

Coefficient layout: array of shape (3, 9), one row of 9 coefficients per
color channel, serialized row-major as 27 floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Orthonormal real SH constants (see GLOSSARY.md for the closed forms).
SH_C0 = 0.28209479177387814  # 1/2 * sqrt(1/pi)
SH_C1 = 0.4886025119029199   # sqrt(3/(4 pi))
SH_C2_XY = 1.0925484305920792  # sqrt(15/(4 pi)), for xy / yz / xz
SH_C2_Z2 = 0.31539156525252005  # 1/4 * sqrt(5/pi), for 3z^2 - 1
SH_C2_X2Y2 = 0.5462742152960396  # 1/4 * sqrt(15/pi), for x^2 - y^2

# Band factors of the clamped-cosine (irradiance) kernel, divided by pi.
_COS_LOBE = np.array([1.0, 2.0 / 3.0, 1.0 / 4.0])
# Peak irradiance of the band-limited lobe at the light direction:
# sum_l cos_lobe[l] * (2l+1)/(4pi) * pi = 1/4 + 1/2 + 5/16.
_COS_LOBE_PEAK = 17.0 / 16.0

NUM_BASIS = 9
_BAND_OF_INDEX = np.array([0, 1, 1, 1, 2, 2, 2, 2, 2])


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9 second-order real SH basis functions at unit vectors.

    Accepts a single 3-vector or an (..., 3) array; returns (..., 9).
    Inputs must be unit length within 1e-4.
    """
    n = np.asarray(normals, dtype=np.float64)
    if n.shape[-1] != 3:
        raise ValidationError(f"normals must have a trailing dimension of 3, got {n.shape}")
    norms = np.linalg.norm(n, axis=-1)
    if np.any(norms < 1e-12):
        raise ValidationError("zero-norm normal vector")
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise ValidationError("normals must be unit length within 1e-4")
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (NUM_BASIS,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = SH_C1 * x
    out[..., 4] = SH_C2_XY * x * y
    out[..., 5] = SH_C2_XY * y * z
    out[..., 6] = SH_C2_Z2 * (3.0 * z * z - 1.0)
    out[..., 7] = SH_C2_XY * x * z
    out[..., 8] = SH_C2_X2Y2 * (x * x - y * y)
    return out


def directional_coeffs(to_light: np.ndarray, intensity: float, ambient: float) -> np.ndarray:
    """Build (3, 9) white-light SH coefficients for a single directional light
    plus a constant ambient term.

    The directional part is the band-limited cosine lobe centred on
    ``to_light`` (the unit vector pointing toward the light), scaled so the
    irradiance at a normal facing the light equals ``intensity`` exactly.
    """
    w = np.asarray(to_light, dtype=np.float64)
    basis_at_light = sh_basis(w)
    lobe = _COS_LOBE[_BAND_OF_INDEX] * np.pi / _COS_LOBE_PEAK
    coeffs = intensity * lobe * basis_at_light
    coeffs[0] += ambient / SH_C0
    return np.tile(coeffs, (3, 1))


def shade(normals: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Irradiance per channel: basis(normals) @ coeffs.T, shape (..., 3)."""
    basis = sh_basis(normals)
    return basis @ np.asarray(coeffs, dtype=np.float64).T


@dataclass
class IlluminationSolution:
    coeffs: np.ndarray      # (3, 9)
    residual: float         # rms residual over valid pixels and channels
    degenerate: bool        # rank-deficient normal system


def solve_illumination(
    image: np.ndarray,
    albedo: np.ndarray,
    shadow_weight: np.ndarray,
    normals: np.ndarray,
    valid_mask: np.ndarray | None = None,
) -> IlluminationSolution:
    """Recover SH illumination coefficients from the Lambertian image model
    pixel = albedo * shadow_weight * (basis(normal) . coeffs) by linear least
    squares, one 9-coefficient solve per color channel.

    Rank-deficient systems (e.g. all normals identical) return the
    minimum-norm solution with ``degenerate=True``.
    """
    image = np.asarray(image, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    shadow_weight = np.asarray(shadow_weight, dtype=np.float64)
    h, w = shadow_weight.shape
    if valid_mask is None:
        valid_mask = np.ones((h, w), dtype=bool)
    valid = np.asarray(valid_mask, dtype=bool)

    basis = sh_basis(np.asarray(normals, dtype=np.float64)[valid])  # (N, 9)
    s = shadow_weight[valid]  # (N,)
    coeffs = np.zeros((3, NUM_BASIS), dtype=np.float64)
    degenerate = False
    sq_sum = 0.0
    n_rows = 0
    for c in range(3):
        gain = albedo[..., c][valid] * s
        rows = np.abs(gain) > 0
        if int(rows.sum()) < NUM_BASIS:
            raise ValidationError(
                f"channel {c}: need at least {NUM_BASIS} valid pixels with nonzero "
                f"albedo*shadow_weight, got {int(rows.sum())}"
            )
        design = gain[rows, None] * basis[rows]
        target = image[..., c][valid][rows]
        sol, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        coeffs[c] = sol
        degenerate = degenerate or rank < NUM_BASIS
        r = design @ sol - target
        sq_sum += float(r @ r)
        n_rows += r.size
    return IlluminationSolution(coeffs=coeffs, residual=float(np.sqrt(sq_sum / n_rows)), degenerate=degenerate)


def render_light_map(coeffs: np.ndarray, resolution: int, background: float = 0.5) -> np.ndarray:
    """Visualize SH illumination by shading a front-facing unit sphere.

    Returns an (H, W, 3) image in [0, 1]: the sphere disk shaded with
    basis(n) . coeffs clamped to [0, 1], on a neutral background. Image +x is
    right, +y is up (row 0 is the top), +z points out of the image.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (3, NUM_BASIS) or not np.all(np.isfinite(coeffs)):
        raise ValidationError(f"coeffs must be a finite (3, {NUM_BASIS}) array")
    r = resolution
    u = (np.arange(r) + 0.5) / r * 2.0 - 1.0
    xs, ys = np.meshgrid(u, -u)  # row 0 is the top of the image (+y)
    rho2 = xs**2 + ys**2
    disk = rho2 <= 0.9025  # sphere radius 0.95 in device coords
    nx = xs[disk] / 0.95
    ny = ys[disk] / 0.95
    nz = np.sqrt(np.clip(1.0 - nx**2 - ny**2, 0.0, None))
    n = np.stack([nx, ny, nz], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    shaded = np.clip(shade(n, coeffs), 0.0, 1.0)
    img = np.full((r, r, 3), background, dtype=np.float64)
    img[disk] = shaded
    return img
