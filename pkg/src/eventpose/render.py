"""Deterministic PNG rendering: LNES panels, heatmap overlays, masks, and
projected skeletons.

Fixed palette: positive-polarity events draw in red (220, 60, 40),
negative in blue (50, 110, 230), over a dark gray background (24, 24, 28).
Pixel intensity scales with the LNES value, so fresher events are brighter.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .camera import FisheyeIntrinsics, project
from .lnes import LnesFrame
from .skeleton import BONE_INDICES, Skeleton16

BACKGROUND_RGB = (24, 24, 28)
POSITIVE_RGB = (220, 60, 40)
NEGATIVE_RGB = (50, 110, 230)
SKELETON_RGB = (80, 230, 120)
JOINT_RGB = (255, 250, 90)


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_lnes(lnes: LnesFrame | np.ndarray) -> np.ndarray:
    """LNES to RGB: bg + pos*(red-bg) + neg*(blue-bg), clipped to [0,255].

    An all-zero frame renders as the uniform background color.
    """
    vals = lnes.values if isinstance(lnes, LnesFrame) else np.asarray(lnes)
    if vals.ndim != 3 or vals.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) LNES values, got {vals.shape}")
    bg = np.asarray(BACKGROUND_RGB, dtype=np.float64)
    pos = np.asarray(POSITIVE_RGB, dtype=np.float64) - bg
    neg = np.asarray(NEGATIVE_RGB, dtype=np.float64) - bg
    img = np.empty(vals.shape[:2] + (3,), dtype=np.float64)
    img[:] = bg
    img += vals[:, :, 0:1] * pos
    img += vals[:, :, 1:2] * neg
    return _to_u8(img)


def render_mask(mask: np.ndarray) -> np.ndarray:
    """Binary or soft mask to grayscale RGB."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise ValueError("mask must be HxW or HxWx1")
    g = _to_u8(m * 255.0)
    return np.stack([g, g, g], axis=-1)


def render_heatmaps(heatmaps: np.ndarray, base: np.ndarray | None = None
                    ) -> np.ndarray:
    """Channel-max heatmap as a heat overlay (black body scale or over base).

    The 16 channels are collapsed with a per-pixel max and normalized by
    the global peak (no-op when the peak is 0).
    """
    hm = np.asarray(heatmaps, dtype=np.float64)
    if hm.ndim != 3:
        raise ValueError(f"expected (H, W, J) heatmaps, got {hm.shape}")
    flat = hm.max(axis=2)
    peak = flat.max()
    if peak > 0:
        flat = flat / peak
    flat = np.clip(flat, 0.0, 1.0)
    # black -> red -> yellow ramp
    r = np.clip(flat * 2.0, 0, 1) * 255.0
    g = np.clip(flat * 2.0 - 1.0, 0, 1) * 255.0
    b = np.zeros_like(flat)
    heat = np.stack([r, g, b], axis=-1)
    if base is None:
        return _to_u8(heat)
    base = np.asarray(base, dtype=np.float64)
    if base.shape[:2] != flat.shape:
        raise ValueError("base image dims do not match heatmaps")
    alpha = flat[:, :, None] * 0.75
    return _to_u8(base * (1 - alpha) + heat * alpha)


def render_skeleton(skel: Skeleton16, intr: FisheyeIntrinsics,
                    base: np.ndarray | None = None,
                    scale_to: tuple | None = None) -> np.ndarray:
    """Project the 16 joints and draw bones/joints onto an image.

    `scale_to` maps sensor pixel coordinates onto a smaller canvas, e.g.
    (192, 256) to draw on LNES-sized panels.
    """
    if base is None:
        h, w = (intr.height, intr.width) if scale_to is None else scale_to
        canvas = np.zeros((h, w, 3), dtype=np.uint8)
        canvas[:] = BACKGROUND_RGB
    else:
        canvas = np.ascontiguousarray(base, dtype=np.uint8).copy()
        h, w = canvas.shape[:2]
    sx = w / intr.width
    sy = h / intr.height
    uv = project(skel.joints, intr)
    uv = uv * np.asarray([sx, sy])
    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img)
    for a, b in BONE_INDICES:
        draw.line([tuple(uv[a]), tuple(uv[b])], fill=SKELETON_RGB, width=1)
    rad = max(1.0, 0.008 * min(h, w))
    for u, v in uv:
        draw.ellipse([u - rad, v - rad, u + rad, v + rad], fill=JOINT_RGB)
    return np.asarray(img)


def save_png(path, img: np.ndarray):
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError("image must be uint8")
    Image.fromarray(arr).save(path, format="PNG")
