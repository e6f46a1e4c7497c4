"""Intensity-profile features of the neck region below a detected spine head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgcore import InvalidInputError, roi_pixels

PROFILE_SIZE = 126
HIST_BINS = 126
INTPROF_SPLIT = (PROFILE_SIZE, PROFILE_SIZE, HIST_BINS)
INTPROF_DIM = sum(INTPROF_SPLIT)


class DetectionError(RuntimeError):
    """Head detection found no two-phase split."""


@dataclass(frozen=True)
class ChanVeseParams:
    mu: float = 0.1
    max_iters: int = 200
    tol: float = 1e-4
    dt: float = 0.5
    # necks are detached by an opening whose radius is this fraction of the
    # largest inscribed radius of the foreground
    open_fraction: float = 0.7


@dataclass(frozen=True)
class HeadDetection:
    head_mask: np.ndarray
    head_bottom: tuple  # (x, y) = (col, row)


@dataclass(frozen=True)
class NeckRects:
    """Half-open pixel rectangles ``(x0, y0, x1, y1)``; may extend past the image."""

    rect1: tuple
    rect2: tuple


def _delta(phi, eps=1.0):
    return eps / (eps ** 2 + phi ** 2)


def chan_vese(img, params: ChanVeseParams = ChanVeseParams()):
    """Two-phase piecewise-constant level-set segmentation.

    Semi-implicit curvature update (Getreuer's scheme); the initial zero level
    set is a centered circle of radius min(w, h)/3. Returns ``(phi, c1, c2)`` with
    ``phi > 0`` the inside phase.
    """
    I = np.asarray(img, dtype=np.float64)
    h, w = I.shape
    rows, cols = np.mgrid[0:h, 0:w]
    phi = min(w, h) / 3.0 - np.hypot(rows - (h - 1) / 2.0, cols - (w - 1) / 2.0)
    # bounded so every pixel starts inside the support of the smoothed delta
    phi = np.clip(phi, -1.0, 1.0)
    eta = 1e-16
    mu, dt = params.mu, params.dt
    c1 = c2 = float(I.mean())
    for _ in range(params.max_iters):
        inside = phi > 0
        n_in = inside.sum()
        if n_in == 0 or n_in == inside.size:
            break
        c1 = float(I[inside].mean())
        c2 = float(I[~inside].mean())
        P = np.pad(phi, 1, mode="edge")
        center = P[1:-1, 1:-1]
        phix0 = (P[1:-1, 2:] - P[1:-1, :-2]) / 2.0
        phiy0 = (P[2:, 1:-1] - P[:-2, 1:-1]) / 2.0
        k1 = 1.0 / np.sqrt(eta + (P[1:-1, 2:] - center) ** 2 + phiy0 ** 2)
        k2 = 1.0 / np.sqrt(eta + (center - P[1:-1, :-2]) ** 2 + phiy0 ** 2)
        k3 = 1.0 / np.sqrt(eta + phix0 ** 2 + (P[2:, 1:-1] - center) ** 2)
        k4 = 1.0 / np.sqrt(eta + phix0 ** 2 + (center - P[:-2, 1:-1]) ** 2)
        curv = P[1:-1, 2:] * k1 + P[1:-1, :-2] * k2 + P[2:, 1:-1] * k3 + P[:-2, 1:-1] * k4
        force = -((I - c1) ** 2) + (I - c2) ** 2
        dd = dt * _delta(phi)
        new = (phi + dd * (mu * curv + force)) / (1.0 + mu * dd * (k1 + k2 + k3 + k4))
        change = float(np.sqrt(np.mean((new - phi) ** 2)))
        phi = new
        if change < params.tol:
            break
    return phi, c1, c2


def detect_head(roi, params: ChanVeseParams = ChanVeseParams()) -> HeadDetection:
    img = roi_pixels(roi)
    if np.ptp(img) == 0:
        raise DetectionError("constant image has no two-phase split")
    phi, c1, c2 = chan_vese(img, params)
    if abs(c1 - c2) < 1e-12:
        raise DetectionError("inside and outside means coincide")
    fg = phi > 0 if c1 > c2 else phi <= 0
    if params.open_fraction > 0 and fg.any():
        r = params.open_fraction * float(ndimage.distance_transform_edt(np.pad(fg, 1)).max())
        k = int(np.floor(r))
        if k >= 1:
            yy, xx = np.mgrid[-k:k + 1, -k:k + 1]
            opened = ndimage.binary_opening(fg, structure=(xx ** 2 + yy ** 2 <= r * r))
            if opened.any():
                fg = opened
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        raise DetectionError("converged foreground is empty")
    sizes = np.bincount(labels.ravel())[1:]
    head = labels == (int(np.argmax(sizes)) + 1)
    rows, cols = np.nonzero(head)
    bottom = int(rows.max())
    xs = np.sort(cols[rows == bottom])
    return HeadDetection(head_mask=head, head_bottom=(int(xs[(xs.size - 1) // 2]), bottom))


def neck_regions(det, a: int = 16, b: int = 12) -> NeckRects:
    """Rectangle 1 (2a x 2b) centered on the head bottom; rectangle 2 (a x b)
    hangs from the head bottom."""
    if a < 2 or b < 2:
        raise InvalidInputError("rectangle half-sizes must be >= 2")
    x, y = det.head_bottom if isinstance(det, HeadDetection) else det
    rect1 = (x - a, y - b, x + a, y + b)
    left = x - a // 2
    rect2 = (left, y, left + a, y + b)
    return NeckRects(rect1, rect2)


def crop_zero_padded(img, rect) -> np.ndarray:
    x0, y0, x1, y1 = rect
    h, w = img.shape
    out = np.zeros((y1 - y0, x1 - x0))
    sy0, sy1 = max(y0, 0), min(y1, h)
    sx0, sx1 = max(x0, 0), min(x1, w)
    if sy0 < sy1 and sx0 < sx1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def _axis_weights(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resample_bilinear(arr, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned bilinear resize with edge clamping."""
    a = np.asarray(arr, dtype=np.float64)
    lo, hi, t = _axis_weights(a.shape[0], out_h)
    rows = a[lo] * (1.0 - t)[:, None] + a[hi] * t[:, None]
    lo, hi, t = _axis_weights(a.shape[1], out_w)
    return rows[:, lo] * (1.0 - t) + rows[:, hi] * t


def compute_intprof(roi, rects: NeckRects) -> np.ndarray:
    """126 row sums ++ 126 column sums of resampled rect1 ++ 126-bin histogram of rect2."""
    img = roi_pixels(roi)
    region = resample_bilinear(crop_zero_padded(img, rects.rect1), PROFILE_SIZE, PROFILE_SIZE)
    hist, _ = np.histogram(crop_zero_padded(img, rects.rect2), bins=HIST_BINS, range=(0.0, 1.0))
    return np.concatenate([region.sum(axis=1), region.sum(axis=0), hist.astype(np.float64)])


def intensity_profile(roi, params: ChanVeseParams = ChanVeseParams(), a: int = 16, b: int = 12):
    """Detect the head and return the 378-dim profile."""
    return compute_intprof(roi, neck_regions(detect_head(roi, params), a, b))
