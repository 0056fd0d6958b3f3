"""Layout and color-adherence metrics for generated images.

Foreground detection: a pixel is foreground when its RGB distance from the
background gray exceeds 0.25 in [-1, 1] units. That threshold sits far from
both the background (distance 0) and every palette color (distance > 0.6).
"""

from __future__ import annotations

import numpy as np

from .synthdata import BACKGROUND, COLOR_NAMES, PALETTE, to_unit

FOREGROUND_THRESHOLD = 0.25


def foreground_mask(image: np.ndarray) -> np.ndarray:
    """Boolean (H, W) mask of pixels far enough from background gray."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {image.shape}")
    bg = to_unit(BACKGROUND).reshape(3, 1, 1)
    dist = np.sqrt(((image - bg) ** 2).sum(axis=0))
    return dist > FOREGROUND_THRESHOLD


def layout_iou(generated: np.ndarray, layout: np.ndarray) -> float:
    """IoU between the generated foreground and the silhouette's +1 mask.

    Two empty masks count as a perfect match (IoU 1.0).
    """
    if layout.ndim == 3:
        layout = layout[0]
    if generated.shape[1:] != layout.shape:
        raise ValueError(
            f"spatial extents differ: generated {generated.shape[1:]}, layout {layout.shape}"
        )
    gen_mask = foreground_mask(generated)
    ref_mask = layout > 0
    union = np.logical_or(gen_mask, ref_mask).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(gen_mask, ref_mask).sum()
    return float(inter) / float(union)


def color_adherence(generated: np.ndarray, layout: np.ndarray, target_color: str):
    """Mean foreground RGB and whether its nearest palette entry matches.

    Foreground pixels are taken from the layout mask. Distance ties break
    toward the lower palette index (palette order: red, green, blue,
    yellow). An empty mask fails adherence and reports no mean.
    """
    if target_color not in PALETTE:
        raise ValueError(f"unknown palette color '{target_color}'")
    if layout.ndim == 3:
        layout = layout[0]
    mask = layout > 0
    if not mask.any():
        return False, None
    mean_rgb = generated[:, mask].mean(axis=1)
    dists = [np.linalg.norm(mean_rgb - to_unit(PALETTE[name])) for name in COLOR_NAMES]
    nearest = COLOR_NAMES[int(np.argmin(dists))]
    return nearest == target_color, tuple(float(v) for v in mean_rgb)


def pixel_mse(generated: np.ndarray, reference: np.ndarray) -> float:
    """Mean squared pixel difference; a 1-channel reference broadcasts."""
    diff = generated - reference
    return float(np.mean(diff * diff))
