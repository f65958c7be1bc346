"""Dataset serialization and generation.

Layout, one directory per sample under `<root>/<split>/sample_XXXXX/`:
    composite.png, gt_image.png            8-bit RGB
    fg_mask.png, bg_shadow_mask.png,
    gt_shadow_mask.png                     8-bit grayscale
    depth.png                              16-bit grayscale
    aux/albedo.png, aux/normals.png        8-bit RGB (normals encoded (n+1)/2)
    aux/shadow_weight.png                  8-bit grayscale
    meta.json                              scene spec, 27 SH floats (row-major
                                           [channel][basis]), seed, split,
                                           bos_mode

Images are quantized to 8 bits on disk; in-memory samples from render_sample
stay float. Generation is deterministic per (seed, index), so regeneration
with the same seed is byte-identical and sample generation can be sharded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import Sample, random_scene, render_sample
from .sh import ValidationError

MIN_SHADOW_PIXELS = 8
_MAX_SCENE_TRIES = 60


def _save_u8(path: Path, arr: np.ndarray) -> None:
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def _save_u16(path: Path, arr: np.ndarray) -> None:
    data = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


def _load(path: Path, scale: float) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float32) / scale


def save_sample(sample: Sample, out_dir: Path, split: str, bos_mode: str) -> None:
    out_dir = Path(out_dir)
    (out_dir / "aux").mkdir(parents=True, exist_ok=True)
    _save_u8(out_dir / "composite.png", sample.composite)
    _save_u8(out_dir / "gt_image.png", sample.gt_image)
    _save_u8(out_dir / "fg_mask.png", sample.fg_mask)
    _save_u8(out_dir / "bg_shadow_mask.png", sample.bg_shadow_mask)
    _save_u8(out_dir / "gt_shadow_mask.png", sample.gt_shadow_mask)
    _save_u16(out_dir / "depth.png", sample.gt_depth)
    _save_u8(out_dir / "aux" / "albedo.png", sample.albedo)
    _save_u8(out_dir / "aux" / "normals.png", (sample.normals + 1.0) * 0.5)
    _save_u8(out_dir / "aux" / "shadow_weight.png", sample.shadow_weight)
    meta = dict(sample.meta)
    meta["split"] = split
    meta["bos_mode"] = bos_mode
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


@dataclass
class LoadedSample:
    name: str
    composite: np.ndarray       # (H, W, 3) float32
    fg_mask: np.ndarray         # (H, W)
    bg_shadow_mask: np.ndarray  # (H, W)
    gt_image: np.ndarray        # (H, W, 3)
    gt_shadow_mask: np.ndarray  # (H, W)
    gt_depth: np.ndarray        # (H, W)
    gt_light: np.ndarray        # (3, 9) float64
    albedo: np.ndarray          # (H, W, 3)
    normals: np.ndarray         # (H, W, 3)
    shadow_weight: np.ndarray   # (H, W)
    meta: dict


def load_sample(sample_dir: Path) -> LoadedSample:
    d = Path(sample_dir)
    meta = json.loads((d / "meta.json").read_text())
    normals = _load(d / "aux" / "normals.png", 255.0) * 2.0 - 1.0
    norms = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.maximum(norms, 1e-6)
    return LoadedSample(
        name=d.name,
        composite=_load(d / "composite.png", 255.0),
        fg_mask=(_load(d / "fg_mask.png", 255.0) > 0.5).astype(np.float32),
        bg_shadow_mask=(_load(d / "bg_shadow_mask.png", 255.0) > 0.5).astype(np.float32),
        gt_image=_load(d / "gt_image.png", 255.0),
        gt_shadow_mask=(_load(d / "gt_shadow_mask.png", 255.0) > 0.5).astype(np.float32),
        gt_depth=_load(d / "depth.png", 65535.0),
        gt_light=np.asarray(meta["sh_coeffs"], dtype=np.float64).reshape(3, 9),
        albedo=_load(d / "aux" / "albedo.png", 255.0),
        normals=normals.astype(np.float32),
        shadow_weight=_load(d / "aux" / "shadow_weight.png", 255.0),
        meta=meta,
    )


def sample_dirs(root: Path, split: str) -> list[Path]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise ValidationError(f"no such split directory: {split_dir}")
    return sorted(p for p in split_dir.iterdir() if p.is_dir() and p.name.startswith("sample_"))


def load_split(root: Path, split: str) -> list[LoadedSample]:
    return [load_sample(d) for d in sample_dirs(root, split)]


def _acceptable(sample: Sample, with_background: bool) -> bool:
    if sample.gt_shadow_mask.sum() < MIN_SHADOW_PIXELS:
        return False
    if with_background and sample.bg_shadow_mask.sum() < MIN_SHADOW_PIXELS:
        return False
    return True


def make_sample(seed: int, index: int, resolution: int, with_background: bool) -> Sample:
    """Deterministic sample for (seed, index): rejection-samples random scenes
    until the foreground shadow (and background shadow, if requested) is
    visibly inside the frame."""
    rng = np.random.default_rng([seed, index])
    for _ in range(_MAX_SCENE_TRIES):
        try:
            sample = render_sample(random_scene(rng, resolution=resolution,
                                                with_background=with_background))
        except ValidationError:
            continue
        if _acceptable(sample, with_background):
            return sample
    raise RuntimeError(f"could not draw an acceptable scene for seed={seed} index={index}")


def generate_dataset(
    root: Path,
    count: int,
    split: str,
    bos_mode: str,
    seed: int,
    resolution: int = 64,
    start_index: int = 0,
) -> list[Path]:
    """Write `count` samples under root/split. bos_mode "with" adds a
    background caster whose shadow appears in both composite and gt_image;
    "without" leaves bg_shadow_mask all zero."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    if split not in ("train", "test"):
        raise ValidationError(f"split must be train or test, got {split!r}")
    if bos_mode not in ("with", "without"):
        raise ValidationError(f"bos_mode must be with or without, got {bos_mode!r}")
    root = Path(root)
    dirs = []
    for i in range(start_index, start_index + count):
        sample = make_sample(seed, i, resolution, with_background=(bos_mode == "with"))
        out = root / split / f"sample_{i:05d}"
        save_sample(sample, out, split, bos_mode)
        dirs.append(out)
    return dirs


def generate_mixed_split(
    root: Path, count: int, split: str, seed: int, resolution: int = 64, bos_fraction: float = 2.0 / 3.0
) -> list[Path]:
    """A split with the first round(count * bos_fraction) samples carrying
    background object-shadow pairs and the rest BOS-free."""
    n_bos = int(round(count * bos_fraction))
    n_bos = min(max(n_bos, 0), count)
    dirs = []
    if n_bos:
        dirs += generate_dataset(root, n_bos, split, "with", seed, resolution, start_index=0)
    if count - n_bos:
        dirs += generate_dataset(root, count - n_bos, split, "without", seed, resolution,
                                 start_index=n_bos)
    return dirs


def tree_digest(root: Path) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()
