"""Rendering of explanation overlays and heat maps to PNG."""

import numpy as np
from scipy.ndimage import binary_erosion

from . import imaging

OUTLINE = (255, 0, 0)
FACE_BOX = (0, 128, 255)
LANDMARK = (0, 220, 0)
PEAK = (255, 220, 0)


def mask_outline(mask):
    """Foreground pixels with at least one 4-neighbor outside the mask (or the image)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, border_value=0)


def _put(rgb, xs, ys, color):
    h, w = rgb.shape[:2]
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    rgb[ys[ok], xs[ok]] = color


def _box_outline(box):
    x0, y0 = int(round(box.x0)), int(round(box.y0))
    x1, y1 = int(round(box.x1)) - 1, int(round(box.y1)) - 1
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    return (np.concatenate([xs, xs, np.full(len(ys), x0), np.full(len(ys), x1)]),
            np.concatenate([np.full(len(xs), y0), np.full(len(xs), y1), ys, ys]))


def _cross(x, y, r=2):
    cx, cy = int(round(x)), int(round(y))
    d = np.arange(-r, r + 1)
    return np.concatenate([cx + d, np.full(len(d), cx)]), np.concatenate([np.full(len(d), cy), cy + d])


def render_overlay(image, overlay):
    """uint8 pixels: the gray image itself for an empty overlay, else RGB with drawings."""
    gray = imaging.to_uint8(image)
    if overlay is None or overlay.empty:
        return gray
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    if overlay.face_box is not None:
        _put(rgb, *_box_outline(overlay.face_box), FACE_BOX)
    if overlay.region_mask is not None:
        ys, xs = np.nonzero(mask_outline(overlay.region_mask))
        _put(rgb, xs, ys, OUTLINE)
    if overlay.landmarks is not None:
        for x, y in overlay.landmarks:
            _put(rgb, *_cross(x, y), LANDMARK)
    if overlay.location_peak is not None:
        _put(rgb, *_cross(*overlay.location_peak, r=1), PEAK)
    return rgb


def emit_overlay(image, overlay, path):
    imaging.save_png(path, render_overlay(image, overlay))


def heat_colors(mass):
    """Black-red-yellow-white ramp; every channel is non-decreasing in mass."""
    m = np.asarray(mass, dtype=np.float64)
    peak = m.max()
    t = m / peak if peak > 0 else np.zeros_like(m)
    rgb = np.stack([np.clip(3 * t, 0, 1), np.clip(3 * t - 1, 0, 1), np.clip(3 * t - 2, 0, 1)], axis=-1)
    return np.rint(rgb * 255).astype(np.uint8)


def emit_heatmap(heat, path):
    imaging.save_png(path, heat_colors(getattr(heat, "mass", heat)))
