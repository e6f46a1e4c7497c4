"""Morphological descriptors of a binary spine mask and information-gain ranking.

Necks are assumed to hang below the head (ROIs are rotated so necks are
vertical), which is how the neck region is located.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import ndimage

from .imgcore import InvalidInputError

# Kulpa's isotropy correction for 8-connected chain length
KULPA = math.pi * (1.0 + math.sqrt(2.0)) / 8.0

# Moore neighbourhood, clockwise starting west (row, col offsets)
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


@dataclass(frozen=True)
class MorphVector:
    neck_length: float
    head_diameter: float
    circularity: float
    shape_factor: float
    bbox_width: float
    bbox_height: float
    perimeter: float
    area: float
    nhr: float
    fg_bg_ratio: float
    neck_diameter: float
    head_neck_diameter_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


MORPH_NAMES = tuple(f.name for f in fields(MorphVector))


def largest_component(mask) -> np.ndarray:
    """Largest 8-connected foreground component (ties: lowest label)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2 or not m.any():
        raise InvalidInputError("mask has no foreground pixels")
    labels, n = ndimage.label(m, structure=np.ones((3, 3), dtype=int))
    if n == 1:
        return m
    warnings.warn(f"mask has {n} components; keeping the largest", stacklevel=2)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def chain_code(mask) -> list:
    """Moore-neighbour trace of the outer boundary; returns direction codes.

    Even codes are axis steps, odd codes diagonal steps. Tracing stops when
    the first move out of the start pixel repeats (Jacob's criterion).
    """
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    rows, cols = np.nonzero(m)
    cur = (int(rows[0]), int(cols[0]))  # topmost, then leftmost: west is background
    back = 0
    first = None
    codes = []
    while True:
        for i in range(8):
            d = (back + i) % 8
            nxt = (cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1])
            if m[nxt]:
                break
        else:
            return []  # isolated pixel
        if first is None:
            first = (cur, d)
        elif (cur, d) == first:
            return codes
        codes.append(d)
        cur = nxt
        # restart the scan from the neighbour preceding the one we came through
        back = (d + 6) % 8 if d % 2 else (d + 5) % 8


def perimeter(mask) -> float:
    codes = chain_code(mask)
    n_diag = sum(c % 2 for c in codes)
    return KULPA * ((len(codes) - n_diag) + math.sqrt(2.0) * n_diag)


def _longest_run(row) -> int:
    best = run = 0
    for v in row:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def compute_morph(mask) -> MorphVector:
    m = largest_component(mask)
    area = float(m.sum())
    rows, cols = np.nonzero(m)
    r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
    bw, bh = float(c1 - c0 + 1), float(r1 - r0 + 1)

    per = perimeter(m)
    if per > 0:
        circ = 4.0 * math.pi * area / per ** 2
        sf = per / (2.0 * math.sqrt(math.pi * area))
    else:
        circ = sf = 0.0

    edt = ndimage.distance_transform_edt(np.pad(m, 1))[1:-1, 1:-1]
    dmax = float(edt.max())
    hr, hc = np.unravel_index(int(np.argmax(edt)), edt.shape)  # topmost maximum
    head_diameter = 2.0 * dmax

    below = m.copy()
    below[: int(math.floor(hr + dmax)) + 1] = False
    neck_rows = np.nonzero(below.any(axis=1))[0]
    if neck_rows.size:
        neck_length = float(neck_rows.max() - neck_rows.min() + 1)
        neck_diameter = float(np.median([_longest_run(below[r]) for r in neck_rows]))
    else:
        neck_length = neck_diameter = 0.0

    bbox_area = bw * bh
    fg_bg = area / (bbox_area - area) if bbox_area > area else area
    return MorphVector(
        neck_length=neck_length,
        head_diameter=head_diameter,
        circularity=circ,
        shape_factor=sf,
        bbox_width=bw,
        bbox_height=bh,
        perimeter=per,
        area=area,
        nhr=neck_length / head_diameter,
        fg_bg_ratio=fg_bg,
        neck_diameter=neck_diameter,
        head_neck_diameter_ratio=head_diameter / neck_diameter if neck_diameter > 0 else head_diameter,
    )


# ------------------------------------------------------------------ info gain


def entropy(labels) -> float:
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def discretize(column, bins: int = 10) -> np.ndarray:
    """Equal-frequency bin ids; columns with <= ``bins`` distinct values keep them."""
    col = np.asarray(column, dtype=np.float64)
    uniq = np.unique(col)
    if uniq.size <= bins:
        return np.searchsorted(uniq, col)
    edges = np.quantile(col, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, col, side="right")


def info_gain(column, labels, bins: int = 10) -> float:
    labels = np.asarray(labels)
    b = discretize(column, bins)
    gain = entropy(labels)
    for v in np.unique(b):
        sel = b == v
        gain -= sel.mean() * entropy(labels[sel])
    return max(gain, 0.0)


def info_gain_ranking(features, labels, bins: int = 10):
    """Columns ordered by information gain (descending, ties by lower index).

    Returns ``(order, gains)`` where ``gains`` is indexed by column.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise InvalidInputError("features and labels disagree in sample count")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise InvalidInputError("information gain needs at least two classes")
    if counts.min() < 2:
        raise InvalidInputError("every class needs at least two samples")
    gains = np.array([info_gain(X[:, j], labels, bins) for j in range(X.shape[1])])
    order = sorted(range(X.shape[1]), key=lambda j: (-gains[j], j))
    return order, gains
