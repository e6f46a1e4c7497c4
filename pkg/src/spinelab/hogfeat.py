"""Histogram of oriented gradients with a fixed 5x5 cell grid (576 dims)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import InvalidInputError, roi_pixels


@dataclass(frozen=True)
class HogParams:
    cells_per_side: int = 5
    block_cells: int = 2
    block_stride: int = 1
    bins: int = 9
    clip: float = 0.2

    @property
    def length(self) -> int:
        blocks = (self.cells_per_side - self.block_cells) // self.block_stride + 1
        return blocks * blocks * self.block_cells ** 2 * self.bins


def cell_edges(side: int, cells: int) -> np.ndarray:
    """Cell boundaries at round(i * side / cells), half rounded up."""
    return np.array([int(math.floor(i * side / cells + 0.5)) for i in range(cells + 1)])


def gradients(img: np.ndarray):
    """Centered [-1, 0, 1] differences with replicated borders."""
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def orientation_votes(gx, gy, bins):
    """Split each pixel's magnitude between the two nearest signed bins.

    Bin ``b`` is centered at ``b * 360 / bins`` degrees; the angle is measured
    with rows growing downwards, so a dark-to-light step to the right is 0 deg.
    Returns ``(lower_bin, upper_bin, lower_weight, upper_weight)`` arrays.
    """
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 360.0
    pos = ang / (360.0 / bins)
    lo = np.floor(pos).astype(int) % bins
    frac = pos - np.floor(pos)
    hi = (lo + 1) % bins
    return lo, hi, mag * (1.0 - frac), mag * frac


def cell_histograms(img: np.ndarray, params: HogParams = HogParams()) -> np.ndarray:
    """Per-cell orientation histograms, shape ``(cells, cells, bins)``."""
    h, w = img.shape
    gx, gy = gradients(img)
    lo, hi, wlo, whi = orientation_votes(gx, gy, params.bins)
    n = params.cells_per_side
    ry, rx = cell_edges(h, n), cell_edges(w, n)
    hist = np.zeros((n, n, params.bins))
    for i in range(n):
        for j in range(n):
            sl = (slice(ry[i], ry[i + 1]), slice(rx[j], rx[j + 1]))
            hist[i, j] += np.bincount(lo[sl].ravel(), wlo[sl].ravel(), params.bins)
            hist[i, j] += np.bincount(hi[sl].ravel(), whi[sl].ravel(), params.bins)
    return hist


def l2hys(v: np.ndarray, clip: float = 0.2) -> np.ndarray:
    """L2 normalize, clip, renormalize; all-zero blocks stay zero."""
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros_like(v)
    v = np.minimum(v / norm, clip)
    return v / np.linalg.norm(v)


def compute_hog(roi, params: HogParams = HogParams()) -> np.ndarray:
    """576-dim descriptor: blocks row-major, cells row-major in a block, bins ascending."""
    img = roi_pixels(roi)
    h, w = img.shape
    min_side = 2 * params.cells_per_side
    if h < min_side or w < min_side:
        raise InvalidInputError(f"ROI {w}x{h} is smaller than {min_side}x{min_side}")
    hist = cell_histograms(img, params)
    b = params.block_cells
    nblocks = (params.cells_per_side - b) // params.block_stride + 1
    out = []
    for by in range(nblocks):
        for bx in range(nblocks):
            y, x = by * params.block_stride, bx * params.block_stride
            out.append(l2hys(hist[y:y + b, x:x + b].reshape(-1), params.clip))
    return np.concatenate(out)
