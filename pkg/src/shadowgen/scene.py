"""Synthetic scenes with analytically known hard shadows.

A scene is a ground plane at z=0 with a procedural albedo texture, a set of
simple casters (sphere, axis-aligned box, vertical cylinder) floating above
it, one directional light, and a straight-down camera (orthographic by
default, optionally pinhole). Shadows are binary ray-cast visibility, so
every mask has a closed-form geometric description.

Image conventions: row 0 is the top of the frame (+y in world), columns grow
with +x. Pixel values live in [0, 1]. Shadows are applied to ground hits
only; caster surfaces keep shadow weight 1, which keeps the composite and the
shadowed render literally identical outside the foreground shadow mask.

The auxiliary shadow-weight map stored in a Sample is the composite's map
(background shadows only): it is what an estimator looking at the composite
would see, and together with albedo/normals/SH it reproduces the composite
exactly. The shadowed render is the same model with the weight lowered by
``shadow_strength`` inside the foreground shadow mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .sh import ValidationError, directional_coeffs, shade, sh_basis

_RAY_EPS = 1e-6
CONTACT_TOL = 1e-3


@dataclass
class Light:
    direction: tuple[float, float, float]  # unit travel direction, z < 0
    intensity: float = 0.75
    ambient: float = 0.2

    def to_light(self) -> np.ndarray:
        """Unit vector pointing from a surface toward the light."""
        return -np.asarray(self.direction, dtype=np.float64)


@dataclass
class Sphere:
    center: tuple[float, float, float]
    radius: float
    kind: str = "sphere"

    def min_z(self) -> float:
        return self.center[2] - self.radius

    def footprint(self) -> tuple[float, float, float, float]:
        cx, cy, _ = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - np.asarray(self.center, dtype=np.float64)
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > _RAY_EPS, t0, np.where(t1 > _RAY_EPS, t1, np.inf))
        return np.where(hit, t, np.inf)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        n = points - np.asarray(self.center, dtype=np.float64)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    kind: str = "box"

    def min_z(self) -> float:
        return self.center[2] - self.half_extents[2]

    def footprint(self) -> tuple[float, float, float, float]:
        cx, cy, _ = self.center
        hx, hy, _ = self.half_extents
        return (cx - hx, cx + hx, cy - hy, cy + hy)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_extents, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t_lo = (c - h - origins) * inv
            t_hi = (c + h - origins) * inv
        entry = np.minimum(t_lo, t_hi)
        exit_ = np.maximum(t_lo, t_hi)
        # Parallel rays: the slab never constrains t when the origin is inside
        # it, and admits no t at all when outside.
        parallel = np.abs(dirs) < 1e-12
        inside = np.abs(origins - c) <= h
        entry = np.where(parallel, np.where(inside, -np.inf, np.inf), entry)
        exit_ = np.where(parallel, np.where(inside, np.inf, -np.inf), exit_)
        t_near = np.max(entry, axis=-1)
        t_far = np.min(exit_, axis=-1)
        hit = (t_near <= t_far) & (t_far > _RAY_EPS)
        t = np.where(t_near > _RAY_EPS, t_near, t_far)
        return np.where(hit, t, np.inf)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        rel = (points - np.asarray(self.center, dtype=np.float64)) / np.asarray(
            self.half_extents, dtype=np.float64
        )
        axis = np.argmax(np.abs(rel), axis=-1)
        n = np.zeros_like(rel)
        idx = np.arange(rel.shape[0])
        n[idx, axis] = np.sign(rel[idx, axis])
        return n


@dataclass
class Cylinder:
    base: tuple[float, float, float]  # center of the bottom cap
    radius: float
    height: float
    kind: str = "cylinder"

    def min_z(self) -> float:
        return self.base[2]

    def footprint(self) -> tuple[float, float, float, float]:
        cx, cy, _ = self.base
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        bx, by, bz = self.base
        z_top = bz + self.height
        ox = origins[..., 0] - bx
        oy = origins[..., 1] - by
        dx = dirs[..., 0]
        dy = dirs[..., 1]
        a = dx * dx + dy * dy
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - self.radius**2
        best = np.full(origins.shape[:-1], np.inf)

        with np.errstate(divide="ignore", invalid="ignore"):
            disc = b * b - a * c
            ok = (disc >= 0.0) & (a > 1e-12)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for t_side in ((-b - sq) / np.where(a > 1e-12, a, 1.0), (-b + sq) / np.where(a > 1e-12, a, 1.0)):
                z = origins[..., 2] + t_side * dirs[..., 2]
                good = ok & (t_side > _RAY_EPS) & (z >= bz) & (z <= z_top)
                best = np.where(good & (t_side < best), t_side, best)
            # Caps.
            dz = dirs[..., 2]
            for z_cap in (bz, z_top):
                t_cap = (z_cap - origins[..., 2]) / np.where(np.abs(dz) > 1e-12, dz, 1.0)
                px = ox + t_cap * dx
                py = oy + t_cap * dy
                good = (np.abs(dz) > 1e-12) & (t_cap > _RAY_EPS) & (px * px + py * py <= self.radius**2)
                best = np.where(good & (t_cap < best), t_cap, best)
        return best

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        bx, by, bz = self.base
        z_top = bz + self.height
        n = np.zeros_like(points)
        on_top = points[..., 2] >= z_top - 1e-6
        on_bottom = points[..., 2] <= bz + 1e-6
        side = ~(on_top | on_bottom)
        n[on_top] = (0.0, 0.0, 1.0)
        n[on_bottom] = (0.0, 0.0, -1.0)
        radial = points[..., :2] - (bx, by)
        norms = np.linalg.norm(radial, axis=-1, keepdims=True)
        norms = np.where(norms < 1e-12, 1.0, norms)
        n[side, 0] = (radial / norms)[side, 0]
        n[side, 1] = (radial / norms)[side, 1]
        return n


Primitive = Sphere | Box | Cylinder


@dataclass
class Camera:
    kind: str = "orthographic"  # or "pinhole"
    half_extent: float = 4.0    # half width of the ground window seen at z=0
    height: float = 12.0

    def rays(self, resolution: int) -> tuple[np.ndarray, np.ndarray]:
        """Primary rays as (origins, dirs), each (H*W, 3)."""
        xs, ys = _pixel_grid(resolution, self.half_extent)
        n = resolution * resolution
        if self.kind == "orthographic":
            origins = np.stack([xs.ravel(), ys.ravel(), np.full(n, self.height)], axis=-1)
            dirs = np.tile((0.0, 0.0, -1.0), (n, 1))
        elif self.kind == "pinhole":
            eye = np.array([0.0, 0.0, self.height])
            targets = np.stack([xs.ravel(), ys.ravel(), np.zeros(n)], axis=-1)
            dirs = targets - eye
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
            origins = np.tile(eye, (n, 1))
        else:
            raise ValidationError(f"unknown camera kind {self.kind!r}")
        return origins, dirs

    def ground_points(self, resolution: int) -> np.ndarray:
        """World-space ground point under each pixel, shape (H*W, 3)."""
        xs, ys = _pixel_grid(resolution, self.half_extent)
        n = resolution * resolution
        return np.stack([xs.ravel(), ys.ravel(), np.zeros(n)], axis=-1)


def _pixel_grid(resolution: int, half_extent: float) -> tuple[np.ndarray, np.ndarray]:
    step = 2.0 * half_extent / resolution
    coords = -half_extent + (np.arange(resolution) + 0.5) * step
    xs, ys = np.meshgrid(coords, -coords)  # row 0 at +y
    return xs, ys


@dataclass
class GroundTexture:
    kind: str = "checker"  # "checker" or "noise"
    scale: float = 1.0
    lo: float = 0.25
    hi: float = 0.75
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def albedo_at(self, xy: np.ndarray) -> np.ndarray:
        if self.kind == "checker":
            cells = np.floor(xy / self.scale).astype(np.int64)
            val = np.where((cells[..., 0] + cells[..., 1]) % 2 == 0, self.lo, self.hi)
        elif self.kind == "noise":
            # Smooth value noise: bilinear interpolation of a seeded lattice.
            lattice_n = 33
            rng = np.random.default_rng(self.seed)
            lattice = rng.uniform(self.lo, self.hi, size=(lattice_n, lattice_n))
            g = xy / self.scale + lattice_n // 2
            g = np.clip(g, 0.0, lattice_n - 1.001)
            i0 = np.floor(g).astype(np.int64)
            f = g - i0
            v00 = lattice[i0[..., 1], i0[..., 0]]
            v10 = lattice[i0[..., 1], i0[..., 0] + 1]
            v01 = lattice[i0[..., 1] + 1, i0[..., 0]]
            v11 = lattice[i0[..., 1] + 1, i0[..., 0] + 1]
            val = (
                v00 * (1 - f[..., 0]) * (1 - f[..., 1])
                + v10 * f[..., 0] * (1 - f[..., 1])
                + v01 * (1 - f[..., 0]) * f[..., 1]
                + v11 * f[..., 0] * f[..., 1]
            )
        else:
            raise ValidationError(f"unknown ground texture {self.kind!r}")
        return val[..., None] * np.asarray(self.color, dtype=np.float64)


@dataclass
class SceneSpec:
    light: Light
    casters: list[Primitive]
    caster_albedos: list[tuple[float, float, float]]
    ground: GroundTexture = field(default_factory=GroundTexture)
    camera: Camera = field(default_factory=Camera)
    resolution: int = 64
    seed: int = 0
    foreground_id: int = 0          # index into casters; the rest are background
    shadow_strength: float = 0.6    # ground shadow weight drops by this much


def validate_scene(scene: SceneSpec) -> None:
    d = np.asarray(scene.light.direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise ValidationError("degenerate light: zero direction vector")
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"light direction must be unit length, |d| = {norm:.8f}")
    if d[2] >= 0.0:
        raise ValidationError("light must come from above (direction z-component < 0)")
    r = scene.resolution
    if r < 4 or (r & (r - 1)) != 0:
        raise ValidationError(f"resolution must be a power of two >= 4, got {r}")
    if not scene.casters:
        raise ValidationError("scene needs at least one caster")
    if len(scene.caster_albedos) != len(scene.casters):
        raise ValidationError("caster_albedos must match casters")
    if not 0 <= scene.foreground_id < len(scene.casters):
        raise ValidationError("foreground_id out of range")
    for i, prim in enumerate(scene.casters):
        if prim.min_z() < CONTACT_TOL:
            raise ValidationError(f"caster {i} penetrates the ground contact tolerance")
    if not 0.0 < scene.shadow_strength < 1.0:
        raise ValidationError("shadow_strength must be in (0, 1)")
    up_irr = float(shade(np.array([0.0, 0.0, 1.0]), scene_light_coeffs(scene))[0])
    if not 0.02 < up_irr <= 1.0:
        raise ValidationError(
            f"ground irradiance {up_irr:.4f} outside (0.02, 1]; adjust intensity/ambient"
        )


def scene_light_coeffs(scene: SceneSpec) -> np.ndarray:
    return directional_coeffs(scene.light.to_light(), scene.light.intensity, scene.light.ambient)


def raycast_shadow_mask(scene: SceneSpec, caster_ids: list[int] | tuple[int, ...]) -> np.ndarray:
    """Binary (H, W) mask: 1 where the ray from the ground point under the
    pixel toward the light hits any caster in ``caster_ids``.

    An empty id list means no occluders (all-zero mask). Pure geometry: the
    mask covers ground points hidden behind casters in the camera view too.
    """
    validate_scene(scene)
    r = scene.resolution
    if len(caster_ids) == 0:
        return np.zeros((r, r), dtype=np.float64)
    points = scene.camera.ground_points(r)
    to_light = scene.light.to_light()
    dirs = np.tile(to_light, (points.shape[0], 1))
    blocked = np.zeros(points.shape[0], dtype=bool)
    for i in caster_ids:
        t = scene.casters[i].intersect(points + _RAY_EPS * dirs, dirs)
        blocked |= np.isfinite(t)
    return blocked.reshape(r, r).astype(np.float64)


@dataclass
class Sample:
    """One training/eval record, float arrays in [0, 1].

    ``composite`` lacks the foreground caster's shadow; ``gt_image`` has it.
    ``shadow_weight`` is the composite's per-pixel weight map (background
    shadows only); the shadowed render uses weight - shadow_strength inside
    ``gt_shadow_mask``.
    """

    composite: np.ndarray       # (H, W, 3)
    fg_mask: np.ndarray         # (H, W) in {0, 1}
    bg_shadow_mask: np.ndarray  # (H, W) in {0, 1}
    gt_image: np.ndarray        # (H, W, 3)
    gt_shadow_mask: np.ndarray  # (H, W) in {0, 1}
    gt_depth: np.ndarray        # (H, W), near = 1, far = 0
    gt_light: np.ndarray        # (3, 9) SH coefficients
    albedo: np.ndarray          # (H, W, 3)
    normals: np.ndarray         # (H, W, 3) unit vectors
    shadow_weight: np.ndarray   # (H, W)
    ground_mask: np.ndarray     # (H, W): pixels whose first hit is the ground
    shadow_strength: float
    meta: dict


def render_sample(scene: SceneSpec) -> Sample:
    """Render a scene into a full Sample.

    The image formation model is albedo * shadow_weight * irradiance(normal)
    with irradiance from the scene's SH coefficients; it holds exactly on
    ground pixels (object pixels clamp negative irradiance to zero).
    """
    validate_scene(scene)
    r = scene.resolution
    half = scene.camera.half_extent
    for i, prim in enumerate(scene.casters):
        x0, x1, y0, y1 = prim.footprint()
        if x1 < -half or x0 > half or y1 < -half or y0 > half:
            raise ValidationError(f"caster {i} lies fully outside the frame")

    origins, dirs = scene.camera.rays(r)
    n_px = origins.shape[0]

    # First hit: nearest caster, else the ground plane.
    t_best = np.full(n_px, np.inf)
    hit_id = np.full(n_px, -1, dtype=np.int64)
    for i, prim in enumerate(scene.casters):
        t = prim.intersect(origins, dirs)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        hit_id = np.where(closer, i, hit_id)
    t_ground = origins[:, 2] / np.maximum(-dirs[:, 2], 1e-12)
    ground_hit = t_ground < t_best
    t_best = np.where(ground_hit, t_ground, t_best)
    hit_id = np.where(ground_hit, -1, hit_id)
    points = origins + t_best[:, None] * dirs

    normals = np.zeros((n_px, 3), dtype=np.float64)
    albedo = np.zeros((n_px, 3), dtype=np.float64)
    normals[ground_hit] = (0.0, 0.0, 1.0)
    albedo[ground_hit] = scene.ground.albedo_at(points[ground_hit][:, :2])
    for i, prim in enumerate(scene.casters):
        sel = hit_id == i
        if np.any(sel):
            normals[sel] = prim.normal_at(points[sel])
            albedo[sel] = scene.caster_albedos[i]

    # Shadow rays from ground hits; caster surfaces keep weight 1.
    to_light = np.tile(scene.light.to_light(), (n_px, 1))
    blocked_fg = np.zeros(n_px, dtype=bool)
    blocked_bg = np.zeros(n_px, dtype=bool)
    shadow_origins = points + _RAY_EPS * to_light
    for i, prim in enumerate(scene.casters):
        t = prim.intersect(shadow_origins, to_light)
        hit = np.isfinite(t) & ground_hit
        if i == scene.foreground_id:
            blocked_fg |= hit
        else:
            blocked_bg |= hit

    k = scene.shadow_strength
    weight_comp = np.where(blocked_bg, 1.0 - k, 1.0)
    fg_only = blocked_fg & ~blocked_bg
    weight_gt = weight_comp - k * fg_only

    coeffs = scene_light_coeffs(scene)
    irradiance = shade(normals, coeffs)  # (N, 3)
    irradiance[~ground_hit] = np.clip(irradiance[~ground_hit], 0.0, None)
    composite = np.clip(albedo * weight_comp[:, None] * irradiance, 0.0, 1.0)
    gt_image = np.clip(albedo * weight_gt[:, None] * irradiance, 0.0, 1.0)

    # Inverse-style depth: nearest surface = 1, farthest = 0.
    dist = t_best
    lo, hi = float(dist.min()), float(dist.max())
    depth = np.full(n_px, 0.5) if hi - lo < 1e-12 else (hi - dist) / (hi - lo)

    fg_mask = (hit_id == scene.foreground_id).astype(np.float64)
    bg_shadow = (blocked_bg & ground_hit).astype(np.float64)
    fg_shadow = (fg_only & ground_hit).astype(np.float64)

    if not np.any(fg_mask):
        raise ValidationError("foreground caster fully outside the frame")

    def grid(a, ch=None):
        return a.reshape((r, r) if ch is None else (r, r, ch))

    meta = {
        "scene": scene_to_dict(scene),
        "sh_coeffs": coeffs.reshape(-1).tolist(),
        "seed": scene.seed,
        "shadow_strength": k,
        "depth_convention": "near=1, far=0, per-image min-max",
    }
    return Sample(
        composite=grid(composite, 3),
        fg_mask=grid(fg_mask),
        bg_shadow_mask=grid(bg_shadow),
        gt_image=grid(gt_image, 3),
        gt_shadow_mask=grid(fg_shadow),
        gt_depth=grid(depth),
        gt_light=coeffs,
        albedo=grid(albedo, 3),
        normals=grid(normals, 3),
        shadow_weight=grid(weight_comp),
        ground_mask=grid(ground_hit.astype(np.float64)),
        shadow_strength=k,
        meta=meta,
    )


def scene_to_dict(scene: SceneSpec) -> dict:
    d = asdict(scene)
    d["casters"] = [asdict(p) for p in scene.casters]
    return d


def scene_from_dict(d: dict) -> SceneSpec:
    kinds = {"sphere": Sphere, "box": Box, "cylinder": Cylinder}
    casters = []
    for p in d["casters"]:
        p = dict(p)
        cls = kinds[p.pop("kind")]
        casters.append(cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()}))
    return SceneSpec(
        light=Light(direction=tuple(d["light"]["direction"]),
                    intensity=d["light"]["intensity"], ambient=d["light"]["ambient"]),
        casters=casters,
        caster_albedos=[tuple(a) for a in d["caster_albedos"]],
        ground=GroundTexture(**{k: tuple(v) if k == "color" else v for k, v in d["ground"].items()}),
        camera=Camera(**d["camera"]),
        resolution=d["resolution"],
        seed=d["seed"],
        foreground_id=d["foreground_id"],
        shadow_strength=d["shadow_strength"],
    )


def light_from_angles(azimuth: float, elevation: float, intensity: float, ambient: float) -> Light:
    """Directional light from azimuth (radians, around +z) and elevation above
    the horizon. The travel direction points down toward the ground."""
    ce = np.cos(elevation)
    direction = (-ce * np.cos(azimuth), -ce * np.sin(azimuth), -np.sin(elevation))
    return Light(direction=tuple(float(v) for v in direction), intensity=intensity, ambient=ambient)


def random_scene(rng: np.random.Generator, resolution: int = 64, with_background: bool = False,
                 camera_kind: str = "orthographic") -> SceneSpec:
    """Draw a random valid scene; with_background adds a second caster whose
    shadow appears in both renders."""
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = rng.uniform(np.deg2rad(30.0), np.deg2rad(65.0))
    intensity = rng.uniform(0.55, 0.75)
    ambient = rng.uniform(0.12, 0.22)
    light = light_from_angles(azimuth, elevation, intensity, ambient)

    def draw_caster(cx, cy):
        kind = rng.choice(["sphere", "box", "cylinder"])
        if kind == "sphere":
            radius = rng.uniform(0.35, 0.8)
            return Sphere(center=(cx, cy, radius + rng.uniform(0.02, 0.6)), radius=float(radius))
        if kind == "box":
            hx, hy, hz = rng.uniform(0.25, 0.7, size=3)
            return Box(center=(cx, cy, hz + rng.uniform(0.02, 0.5)),
                       half_extents=(float(hx), float(hy), float(hz)))
        radius = rng.uniform(0.25, 0.6)
        height = rng.uniform(0.5, 1.6)
        return Cylinder(base=(cx, cy, rng.uniform(0.02, 0.4)), radius=float(radius), height=float(height))

    fg_x, fg_y = float(rng.uniform(-1.2, 1.2)), float(rng.uniform(-1.2, 1.2))
    casters: list[Primitive] = [draw_caster(fg_x, fg_y)]
    albedos = [tuple(rng.uniform(0.3, 0.9, size=3).tolist())]
    if with_background:
        # Keep the background caster away from the foreground one.
        angle = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(2.0, 2.8)
        bx = float(np.clip(fg_x + dist * np.cos(angle), -2.6, 2.6))
        by = float(np.clip(fg_y + dist * np.sin(angle), -2.6, 2.6))
        casters.append(draw_caster(bx, by))
        albedos.append(tuple(rng.uniform(0.3, 0.9, size=3).tolist()))

    if rng.uniform() < 0.5:
        ground = GroundTexture(kind="checker", scale=float(rng.uniform(0.6, 1.5)),
                               lo=float(rng.uniform(0.18, 0.35)), hi=float(rng.uniform(0.55, 0.9)),
                               color=tuple(rng.uniform(0.75, 1.0, size=3).tolist()))
    else:
        ground = GroundTexture(kind="noise", scale=float(rng.uniform(0.8, 2.0)),
                               lo=float(rng.uniform(0.2, 0.35)), hi=float(rng.uniform(0.55, 0.9)),
                               color=tuple(rng.uniform(0.75, 1.0, size=3).tolist()),
                               seed=int(rng.integers(0, 2**31 - 1)))

    scene = SceneSpec(
        light=light,
        casters=casters,
        caster_albedos=albedos,
        ground=ground,
        camera=Camera(kind=camera_kind),
        resolution=resolution,
        seed=0,
        foreground_id=0,
        shadow_strength=float(rng.uniform(0.45, 0.7)),
    )
    return scene


def mask_centroid(mask: np.ndarray, half_extent: float = 4.0) -> np.ndarray | None:
    """Area centroid of a binary mask in world xy coordinates, or None if empty."""
    ys, xs = np.nonzero(mask > 0.5)
    if xs.size == 0:
        return None
    r = mask.shape[0]
    step = 2.0 * half_extent / r
    wx = -half_extent + (xs + 0.5) * step
    wy = half_extent - (ys + 0.5) * step
    return np.array([wx.mean(), wy.mean()])


def scene_meta_json(sample: Sample) -> str:
    return json.dumps(sample.meta, indent=1, sort_keys=True)
