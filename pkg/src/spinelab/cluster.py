"""k-means and x-means (sweep over k, best BIC wins)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .imgcore import InvalidInputError

MAX_LLOYD_ITERS = 300


@dataclass
class Clustering:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    inertia: float
    bic: float = float("nan")
    inertia_trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": [int(a) for a in self.assignment],
                "centroids": self.centroids.tolist(), "inertia": self.inertia, "bic": self.bic}


@dataclass
class XmeansResult:
    best: Clustering
    trace: list  # (k, inertia, bic) per candidate

    def to_json(self, spine_ids=None) -> str:
        d = self.best.to_dict()
        d["trace"] = [{"k": k, "inertia": i, "bic": b} for k, i, b in self.trace]
        if spine_ids is not None:
            d["spine_ids"] = list(spine_ids)
        return json.dumps(d, indent=1)


def _sq_dists(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _means(X, assign, k):
    onehot = np.zeros((k, X.shape[0]))
    onehot[assign, np.arange(X.shape[0])] = 1.0
    return (onehot @ X) / onehot.sum(axis=1)[:, None]


def kmeanspp_init(X, k, rng) -> np.ndarray:
    """k-means++ seeding; returns the chosen row indices."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # every point coincides with a center: take an unused index
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(chosen)


def lloyd(X, centroids, max_iters=MAX_LLOYD_ITERS):
    """Lloyd iterations from ``centroids`` until the assignment stops changing.

    Ties go to the lowest centroid index. An empty cluster takes the point
    farthest from its current centroid.
    """
    C = np.array(centroids, dtype=np.float64)
    k = C.shape[0]
    assign = None
    trace = []
    for _ in range(max_iters):
        d2 = _sq_dists(X, C)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.nonzero(counts == 0)[0]:
            own = d2[np.arange(X.shape[0]), new]
            # only steal from clusters that can spare a point
            own = np.where(np.bincount(new, minlength=k)[new] > 1, own, -1.0)
            far = int(np.argmax(own))
            new[far] = j
        trace.append(float(d2[np.arange(X.shape[0]), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        C = _means(X, assign, k)
    inertia = float(_sq_dists(X, C)[np.arange(X.shape[0]), assign].sum())
    trace.append(inertia)
    return assign, C, inertia, trace


def kmeans(X, k: int, seed: int = 0, restarts: int = 10) -> Clustering:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise InvalidInputError(f"k={k} must lie in [1, n={n}]")
    if restarts < 1:
        raise InvalidInputError("restarts must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    best = None
    for _ in range(restarts):
        init = X[kmeanspp_init(X, k, rng)]
        assign, C, inertia, trace = lloyd(X, init)
        if best is None or inertia < best.inertia:
            best = Clustering(k, assign, C, inertia, inertia_trace=trace)
    return best


def bic(X, clustering: Clustering) -> float:
    """Spherical-Gaussian BIC (larger is better).

    Returns -inf when n == k (variance undefined) and +inf when the
    clustering fits the data exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    k = clustering.k
    if n <= k:
        return -math.inf
    var = clustering.inertia / (d * (n - k))
    if var <= 0:
        return math.inf
    counts = np.bincount(clustering.assignment, minlength=k).astype(np.float64)
    ll = 0.0
    for nc in counts:
        if nc == 0:
            continue
        ll += (nc * math.log(nc) - nc * math.log(n)
               - nc * d / 2.0 * math.log(2 * math.pi * var) - d * (nc - 1) / 2.0)
    p = (k - 1) + k * d + 1
    return ll - p / 2.0 * math.log(n)


def xmeans(X, kmin: int = 2, kmax: int = 10, seed: int = 0, restarts: int = 10) -> XmeansResult:
    """Run k-means for every k in [kmin, kmax]; keep the best BIC (ties: smaller k)."""
    X = np.asarray(X, dtype=np.float64)
    if kmin < 1 or kmin > kmax:
        raise InvalidInputError(f"invalid k range [{kmin}, {kmax}]")
    if kmax > X.shape[0]:
        raise InvalidInputError(f"kmax={kmax} exceeds the sample count {X.shape[0]}")
    best = None
    trace = []
    for k in range(kmin, kmax + 1):
        c = kmeans(X, k, seed=_seed_for(seed, k), restarts=restarts)
        c.bic = bic(X, c)
        trace.append((k, c.inertia, c.bic))
        if best is None or c.bic > best.bic:
            best = c
    return XmeansResult(best, trace)


def _seed_for(seed, k):
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def zscore(X) -> np.ndarray:
    """Column-wise standardization; constant columns become zero."""
    X = np.asarray(X, dtype=np.float64)
    sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
