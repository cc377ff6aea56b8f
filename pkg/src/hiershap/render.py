"""Heatmap rendering: signed saliency on a diverging palette over the image."""

from __future__ import annotations

import numpy as np

from .explainer import SaliencyMap
from .hierarchy import RasterImage
from .masking import GroundTruth, mask_to_bools


def diverging_palette(values: np.ndarray) -> np.ndarray:
    """Map signed values to RGB: negative blue, zero white, positive red.

    Scaled symmetrically by the largest magnitude; an all-zero plane maps
    to neutral white everywhere.
    """
    scale = float(np.max(np.abs(values)))
    v = values / scale if scale > 0 else np.zeros_like(values)
    pos = np.clip(v, 0.0, 1.0)
    neg = np.clip(-v, 0.0, 1.0)
    r = 255 * (1.0 - neg)
    g = 255 * (1.0 - np.maximum(pos, neg))
    b = 255 * (1.0 - pos)
    return np.stack([r, g, b], axis=-1)


def truth_contour(truth: GroundTruth, width: int, height: int) -> np.ndarray:
    """Boolean mask of truth pixels that touch a non-truth 4-neighbor."""
    inside = mask_to_bools(truth.mask, truth.n).reshape(height, width)
    padded = np.pad(inside, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return inside & ~interior


def render_overlay(
    image: RasterImage,
    saliency: SaliencyMap,
    cls: int = 0,
    truth: GroundTruth | None = None,
    alpha: float = 0.6,
) -> RasterImage:
    """Alpha-blend the class's heatmap over the image, optionally outlining
    the ground truth in green."""
    if saliency.width != image.width or saliency.height != image.height:
        raise ValueError("saliency dimensions do not match the image")
    base = image.data if image.channels == 3 else np.repeat(image.data, 3, axis=2)
    heat = diverging_palette(saliency.plane(cls))
    out = (1.0 - alpha) * base.astype(np.float64) + alpha * heat
    if truth is not None:
        contour = truth_contour(truth, image.width, image.height)
        out[contour] = (0.0, 255.0, 0.0)
    return RasterImage(np.clip(np.round(out), 0, 255).astype(np.uint8))
