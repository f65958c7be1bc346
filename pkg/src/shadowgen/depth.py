"""Depth providers: ground-truth passthrough for the synthetic setting, or an
external monocular estimator reached by subprocess or HTTP.

External contract: the estimator receives the composite image (PNG file path
for subprocess commands, PNG body for HTTP endpoints) and returns a
single-channel float map of the same resolution as a .npy payload. Outputs
are min-max normalized to [0, 1] per image; a zero-range map normalizes to a
constant 0.5.
"""

from __future__ import annotations

import io
import subprocess
import tempfile
import urllib.request
from pathlib import Path

import numpy as np
from PIL import Image


class DepthProviderError(RuntimeError):
    """External estimator unavailable or misbehaving; never falls back silently."""


def normalize_depth(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float32)
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo < 1e-12:
        return np.full_like(raw, 0.5)
    return (raw - lo) / (hi - lo)


def estimate_depth(
    composite: np.ndarray,
    mode: str,
    gt_depth: np.ndarray | None = None,
    command: str | None = None,
    endpoint: str | None = None,
    timeout: float = 60.0,
) -> np.ndarray:
    """Depth map in [0, 1] for a composite image.

    mode="oracle" passes through the sample's ground-truth depth (synthetic
    setting). mode="external" runs `command` (a template with {input} and
    {output} placeholders) or POSTs to `endpoint`, then min-max normalizes.
    """
    if mode == "oracle":
        if gt_depth is None:
            raise DepthProviderError("oracle depth mode needs the sample's ground-truth depth")
        return np.asarray(gt_depth, dtype=np.float32).copy()
    if mode != "external":
        raise DepthProviderError(f"unknown depth mode {mode!r}")
    if command is None and endpoint is None:
        raise DepthProviderError(
            "external depth mode is not configured (set depth_command or depth_endpoint); "
            "use depth_mode=oracle for the synthetic setting"
        )
    raw = _run_command(composite, command, timeout) if command else _post_endpoint(composite, endpoint, timeout)
    if raw.ndim != 2 or raw.shape != composite.shape[:2]:
        raise DepthProviderError(
            f"external estimator returned shape {raw.shape}, expected {composite.shape[:2]}"
        )
    return normalize_depth(raw)


def _to_png_bytes(composite: np.ndarray) -> bytes:
    img = Image.fromarray(np.round(np.clip(composite, 0, 1) * 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _run_command(composite: np.ndarray, command: str, timeout: float) -> np.ndarray:
    with tempfile.TemporaryDirectory() as tmp:
        in_path = Path(tmp) / "input.png"
        out_path = Path(tmp) / "depth.npy"
        in_path.write_bytes(_to_png_bytes(composite))
        cmd = command.format(input=str(in_path), output=str(out_path))
        try:
            proc = subprocess.run(cmd, shell=True, capture_output=True, timeout=timeout)
        except subprocess.TimeoutExpired as e:
            raise DepthProviderError(f"external depth command timed out: {cmd}") from e
        if proc.returncode != 0:
            raise DepthProviderError(
                f"external depth command failed ({proc.returncode}): {proc.stderr.decode(errors='replace')[:500]}"
            )
        if not out_path.exists():
            raise DepthProviderError("external depth command produced no output file")
        return np.load(out_path)


def _post_endpoint(composite: np.ndarray, endpoint: str, timeout: float) -> np.ndarray:
    req = urllib.request.Request(endpoint, data=_to_png_bytes(composite),
                                 headers={"Content-Type": "image/png"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            payload = resp.read()
    except Exception as e:  # connection refused, HTTP error, timeout
        raise DepthProviderError(f"external depth endpoint failed: {e}") from e
    try:
        return np.load(io.BytesIO(payload), allow_pickle=False)
    except Exception as e:
        raise DepthProviderError("external depth endpoint returned an unreadable payload") from e
