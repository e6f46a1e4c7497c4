"""Cluster-vs-expert comparison: contingency tables, majority mapping, average images."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgcore import InvalidInputError


@dataclass(frozen=True)
class ContingencyTable:
    """``counts[c, j]`` = samples of class ``classes[c]`` in cluster ``clusters[j]``."""

    classes: tuple
    clusters: tuple
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (len(self.classes), len(self.clusters)):
            raise InvalidInputError(f"counts shape {c.shape} disagrees with labels")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise InvalidInputError("contingency counts must be integers")
            c = c.astype(np.int64)
        if np.any(c < 0):
            raise InvalidInputError("contingency counts must be non-negative")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class"] + [str(j) for j in self.clusters])
        for name, row in zip(self.classes, self.counts):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ContingencyTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2:
            raise InvalidInputError("contingency CSV needs a header and at least one class row")
        clusters = tuple(rows[0][1:])
        classes = tuple(r[0] for r in rows[1:])
        try:
            counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        except ValueError as exc:
            raise InvalidInputError(f"non-integer count in contingency CSV: {exc}") from None
        return cls(classes, clusters, counts)


def contingency(assignment, labels, classes=None, clusters=None) -> ContingencyTable:
    """Cross-tabulate labels (rows) against cluster ids (columns).

    Row and column order default to first appearance in ``labels`` and to
    sorted cluster ids.
    """
    assignment = list(assignment)
    labels = list(labels)
    if len(assignment) != len(labels):
        raise InvalidInputError(f"{len(assignment)} assignments vs {len(labels)} labels")
    if not labels:
        raise InvalidInputError("contingency needs at least one sample")
    if classes is None:
        classes = list(dict.fromkeys(labels))
    if clusters is None:
        clusters = sorted(set(assignment))
    ci = {c: i for i, c in enumerate(classes)}
    ki = {k: j for j, k in enumerate(clusters)}
    counts = np.zeros((len(classes), len(clusters)), dtype=np.int64)
    for a, lab in zip(assignment, labels):
        if lab not in ci or a not in ki:
            raise InvalidInputError(f"sample ({lab!r}, {a!r}) outside the declared classes/clusters")
        counts[ci[lab], ki[a]] += 1
    return ContingencyTable(tuple(classes), tuple(clusters), counts)


def majority_mapping(table: ContingencyTable) -> list:
    """Class assigned to each cluster; ties go to the class listed first."""
    if np.any(table.counts.sum(axis=0) == 0):
        empty = [table.clusters[j] for j in np.nonzero(table.counts.sum(axis=0) == 0)[0]]
        raise InvalidInputError(f"empty cluster columns: {empty}")
    return [table.classes[int(np.argmax(table.counts[:, j]))] for j in range(len(table.clusters))]


def majority_correct(table: ContingencyTable) -> int:
    majority_mapping(table)  # validates columns
    return int(table.counts.max(axis=0).sum())


def majority_accuracy(table: ContingencyTable) -> float:
    """Fraction of samples whose cluster's majority class matches their own."""
    return majority_correct(table) / table.total


@dataclass(frozen=True)
class AverageImage:
    image: np.ndarray
    member_count: int


def center_mask(mask, canvas) -> np.ndarray:
    """Paste ``mask`` onto a ``canvas`` raster with its foreground centroid at the center.

    The integer shift rounds half up, so translated copies of a mask land on
    the same pixels; pixels that fall outside the canvas are dropped.
    """
    m = np.asarray(mask, dtype=bool)
    ch, cw = (canvas, canvas) if np.isscalar(canvas) else canvas
    if not m.any():
        raise InvalidInputError("cannot center an empty mask")
    cy, cx = ndimage.center_of_mass(m)
    dy = int(np.floor((ch - 1) / 2.0 - cy + 0.5))
    dx = int(np.floor((cw - 1) / 2.0 - cx + 0.5))
    out = np.zeros((ch, cw), dtype=bool)
    rows, cols = np.nonzero(m)
    rows, cols = rows + dy, cols + dx
    keep = (rows >= 0) & (rows < ch) & (cols >= 0) & (cols < cw)
    out[rows[keep], cols[keep]] = True
    return out


def average_image(masks, assignment, cluster_id, canvas) -> AverageImage:
    """Pixelwise mean of the centroid-centered member masks of one cluster."""
    members = [m for m, a in zip(masks, assignment) if a == cluster_id]
    if not members:
        raise InvalidInputError(f"cluster {cluster_id!r} has no members")
    stack = np.stack([center_mask(m, canvas) for m in members]).astype(np.float64)
    return AverageImage(stack.mean(axis=0), len(members))
