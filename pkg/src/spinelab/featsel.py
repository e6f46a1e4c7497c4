"""Unsupervised feature selection by feature similarity.

Features are clustered greedily with the maximal information compression
index (the smaller eigenvalue of a pair's 2x2 covariance) as dissimilarity:
each round keeps the feature whose k-th nearest remaining neighbour is
closest and discards those k neighbours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imgcore import InvalidInputError


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    column_names: tuple = ()
    row_ids: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise InvalidInputError(f"feature matrix needs >= 2 rows and >= 1 column, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", v)
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(f"f{j:03d}" for j in range(v.shape[1])))
        if len(self.column_names) != v.shape[1]:
            raise InvalidInputError("column_names length disagrees with the matrix")
        if self.row_ids and len(self.row_ids) != v.shape[0]:
            raise InvalidInputError("row_ids length disagrees with the matrix")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take(self, columns) -> "FeatureMatrix":
        cols = list(columns)
        return FeatureMatrix(self.values[:, cols], tuple(self.column_names[j] for j in cols), self.row_ids)


@dataclass
class SelectionResult:
    kept: list
    trace: list = field(default_factory=list)  # dicts: selected, discarded, k

    def to_json(self) -> str:
        return json.dumps({"kept": self.kept, "lambda_trace": self.trace}, indent=1)


def _lambda2(vx, vy, cov):
    """Smaller eigenvalue of [[vx, cov], [cov, vy]], computed without cancellation."""
    tr = vx + vy
    det = np.maximum(vx * vy - cov * cov, 0.0)
    big = 0.5 * (tr + np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(big > 0, det / np.where(big > 0, big, 1.0), 0.0)


def mici(x, y) -> float:
    """Maximal information compression index of two columns (sample moments)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidInputError("mici needs two columns of equal length >= 2")
    c = np.cov(x, y)
    return float(_lambda2(c[0, 0], c[1, 1], c[0, 1]))


def mici_matrix(X) -> np.ndarray:
    """Pairwise index between all columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise InvalidInputError("mici needs at least two samples")
    c = np.atleast_2d(np.cov(X, rowvar=False))
    v = np.diag(c)
    return _lambda2(v[:, None], v[None, :], c)


def initial_k(d: int, target: int) -> int:
    return max(1, (d - target) // target)


def select_features(X, target: int = 100, standardize: bool = False) -> SelectionResult:
    """Keep exactly ``target`` columns (indices returned in increasing order).

    ``k`` starts at ``max(1, (d - target) // target)`` and shrinks whenever
    discarding k neighbours would leave fewer than ``target`` features; once
    every remaining feature is needed they are all kept.
    """
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    d = values.shape[1]
    if target < 1 or target > d:
        raise InvalidInputError(f"selection target {target} outside [1, {d}]")
    if standardize:
        sd = values.std(axis=0, ddof=1)
        values = (values - values.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    dist = mici_matrix(values)

    remaining = list(range(d))
    selected = []
    trace = []
    k = initial_k(d, target)
    while len(selected) < target and remaining:
        if len(selected) + len(remaining) <= target:
            selected.extend(remaining)
            trace.append({"selected": list(remaining), "discarded": [], "k": 0})
            break
        k = max(1, min(k, len(selected) + len(remaining) - target, len(remaining) - 1))
        rem = np.array(remaining)
        sub = dist[np.ix_(rem, rem)]
        np.fill_diagonal(sub, np.inf)
        # stable sort keeps lower indices first among equal distances
        order = np.argsort(sub, axis=1, kind="stable")
        kth = sub[np.arange(len(rem)), order[:, k - 1]]
        best = int(np.argmin(kth))
        neighbours = [int(rem[j]) for j in order[best, :k]]
        chosen = int(rem[best])
        selected.append(chosen)
        trace.append({"selected": [chosen], "discarded": sorted(neighbours), "k": k})
        gone = set(neighbours) | {chosen}
        remaining = [j for j in remaining if j not in gone]
    return SelectionResult(kept=sorted(selected), trace=trace)
