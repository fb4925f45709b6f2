"""Image renderings: embedding scatter plots and label overlays."""

from __future__ import annotations

import numpy as np

from discseg.synthdata import PALETTE

CANVAS_BG = np.array((255, 255, 255), dtype=np.uint8)
UNLABELED = np.array((128, 128, 128), dtype=np.uint8)


def label_colors(labels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8; label k gets palette color (k - 1) mod len(PALETTE)."""
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    fg = labels > 0
    out[fg] = PALETTE[(labels[fg] - 1) % len(PALETTE)]
    return out


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Blend label colors over an RGB image in [0, 1]; returns uint8."""
    base = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255)
    colors = label_colors(labels).astype(np.float64)
    fg = (labels > 0)[..., None]
    out = np.where(fg, (1 - alpha) * base + alpha * colors, base)
    return np.rint(out).astype(np.uint8)


def scatter(
    points: np.ndarray,
    labels: np.ndarray,
    size: int = 256,
    margin: int = 8,
    extent: tuple[float, float, float, float] | None = None,
) -> np.ndarray:
    """Plot 2-D points as 3x3 dots on a white canvas, colored by label
    (label 0 in gray).  ``extent`` is (xmin, xmax, ymin, ymax); by default it
    is the bounding square of the points.  The y axis points up."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels).reshape(-1)
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = CANVAS_BG
    if len(points) == 0:
        return canvas
    if extent is None:
        lo, hi = points.min(axis=0), points.max(axis=0)
        mid, half = (lo + hi) / 2, max(float((hi - lo).max()) / 2, 1e-9)
        extent = (mid[0] - half, mid[0] + half, mid[1] - half, mid[1] + half)
    x0, x1, y0, y1 = extent
    span = size - 1 - 2 * margin
    cols = np.rint(margin + (points[:, 0] - x0) / max(x1 - x0, 1e-12) * span).astype(int)
    rows = np.rint(margin + (y1 - points[:, 1]) / max(y1 - y0, 1e-12) * span).astype(int)
    colors = np.where(labels[:, None] > 0, PALETTE[(labels - 1) % len(PALETTE)], UNLABELED)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r = np.clip(rows + dr, 0, size - 1)
            c = np.clip(cols + dc, 0, size - 1)
            canvas[r, c] = colors
    return canvas
