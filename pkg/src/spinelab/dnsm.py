"""Disjunctive normal shape model fitted by gradient descent.

The characteristic function is a union of convex polytopes, each the
intersection of sigmoid half-spaces::

    f(x, y) = 1 - prod_i (1 - prod_j sigmoid(w0 + w1 x + w2 y))

with ``(x, y)`` normalized to the unit square (pixel centers). The model is
fitted to an intensity image by minimizing the two-phase piecewise-constant
region energy ``sum f (I - c1)^2 + (1 - f) (I - c2)^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .imgcore import InvalidInputError, roi_pixels

N_POLYTOPES = 16
N_HALFSPACES = 8
N_PARAMS = N_POLYTOPES * N_HALFSPACES * 3


class DnsmFitError(ArithmeticError):
    """Energy became non-finite during fitting."""

    def __init__(self, iteration: int, energy: float):
        super().__init__(f"non-finite DNSM energy {energy!r} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class DnsmModel:
    coeffs: np.ndarray  # (polytopes, halfspaces, 3) as (w0, w1, w2)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 3:
            raise InvalidInputError(f"coefficient tensor must be (P, H, 3), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("DNSM coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, polytopes=N_POLYTOPES, halfspaces=N_HALFSPACES):
        return cls(np.zeros((polytopes, halfspaces, 3)))

    @property
    def polytopes(self) -> int:
        return self.coeffs.shape[0]

    @property
    def halfspaces(self) -> int:
        return self.coeffs.shape[1]

    def to_json(self) -> str:
        return json.dumps({"polytopes": self.polytopes, "halfspaces": self.halfspaces,
                           "coeffs": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DnsmModel":
        d = json.loads(text)
        c = np.array(d["coeffs"], dtype=np.float64)
        if c.shape != (d["polytopes"], d["halfspaces"], 3):
            raise InvalidInputError("DNSM JSON header disagrees with coefficient shape")
        return cls(c)


@dataclass(frozen=True)
class FitHyper:
    learning_rate: float = 0.5
    max_iters: int = 300
    tol: float = 1e-6
    init_scheme: str = "grid"
    max_halvings: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.tol < 0:
            raise InvalidInputError("tol must be non-negative")
        if self.init_scheme != "grid":
            raise InvalidInputError(f"unknown init scheme {self.init_scheme!r}")


def to_feature(model: DnsmModel) -> np.ndarray:
    """Flatten coefficients in (polytope, half-space, k) order."""
    return model.coeffs.reshape(-1).copy()


def from_feature(vec, polytopes=N_POLYTOPES, halfspaces=N_HALFSPACES) -> DnsmModel:
    return DnsmModel(np.asarray(vec, dtype=np.float64).reshape(polytopes, halfspaces, 3))


def pixel_coords(width: int, height: int):
    """Normalized pixel-center coordinates, flattened row-major."""
    ys, xs = np.mgrid[0:height, 0:width]
    return (xs.ravel() + 0.5) / width, (ys.ravel() + 0.5) / height


def _forward(coeffs, x, y):
    basis = np.stack([np.ones_like(x), x, y])
    z = (coeffs.reshape(-1, 3) @ basis).reshape(coeffs.shape[0], coeffs.shape[1], -1)
    sig = expit(z)  # (P, H, n)
    g = np.prod(sig, axis=1)  # (P, n)
    f = 1.0 - np.prod(1.0 - g, axis=0)
    return sig, g, f


def characteristic(model: DnsmModel, x, y):
    """Evaluate f at unit-square coordinates (scalars or arrays)."""
    xa, ya = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    _, _, f = _forward(model.coeffs, xa.ravel(), ya.ravel())
    return f.reshape(xa.shape) if xa.ndim else float(f[0])


def region_means(img, f):
    c1 = float(np.sum(f * img) / np.sum(f))
    c2 = float(np.sum((1.0 - f) * img) / np.sum(1.0 - f))
    return c1, c2


def energy(coeffs, img) -> float:
    """Region energy with c1, c2 set to their optimal (weighted-mean) values."""
    img = np.asarray(img, dtype=np.float64)
    coords = pixel_coords(img.shape[1], img.shape[0])
    return _energy_at(np.asarray(coeffs, dtype=np.float64), img, coords)


def energy_and_gradient(coeffs, img, coords=None):
    """Energy and its exact gradient w.r.t. all coefficients.

    c1 and c2 minimize the energy for fixed f, so their dependence on the
    coefficients drops out of the total derivative.
    """
    img = np.asarray(img, dtype=np.float64)
    x, y = coords if coords is not None else pixel_coords(img.shape[1], img.shape[0])
    I = img.ravel()
    sig, g, f = _forward(coeffs, x, y)
    c1, c2 = region_means(I, f)
    e = float(np.sum(f * (I - c1) ** 2 + (1.0 - f) * (I - c2) ** 2))

    d = (I - c1) ** 2 - (I - c2) ** 2  # dE/df
    comp = 1.0 - g
    # product of (1 - g_l) over l != i, without dividing by possibly-zero terms
    ones = np.ones((1, comp.shape[1]))
    before = np.cumprod(np.vstack([ones, comp[:-1]]), axis=0)
    after = np.cumprod(np.vstack([ones, comp[:0:-1]]), axis=0)[::-1]
    df_dg = before * after
    dz = (d * df_dg * g)[:, None, :] * (1.0 - sig)  # dE/dz, (P, H, n)
    grad = np.stack([dz.sum(axis=2), dz @ x, dz @ y], axis=2)
    return e, grad


def grid_init(width: int, height: int, polytopes=N_POLYTOPES, halfspaces=N_HALFSPACES,
              inset_px: float = 3.0, overlap_px: float = 1.5):
    """Octagons on a square grid tiling the unit square.

    The grid covers the square inset by ``inset_px`` from the ROI border; each
    octagon is its grid cell grown by ``overlap_px`` so neighbours overlap and
    the initial background phase is the ROI border ring. Each sigmoid goes
    from 0.12 to 0.88 across roughly 2 pixels.
    """
    side = int(round(math.sqrt(polytopes)))
    if side * side != polytopes:
        raise InvalidInputError("grid initialization needs a square polytope count")
    n = max(width, height)
    scale = 2.0 * n
    inset, grow = inset_px / n, overlap_px / n
    cell = (1.0 - 2 * inset) / side
    angles = 2 * np.pi * np.arange(halfspaces) / halfspaces
    nx, ny = np.cos(angles), np.sin(angles)
    # support of the cell square along each normal, plus the overlap
    dist = 0.5 * cell * (np.abs(nx) + np.abs(ny)) + grow
    coeffs = np.zeros((polytopes, halfspaces, 3))
    for a in range(side):
        for b in range(side):
            cx, cy = inset + (b + 0.5) * cell, inset + (a + 0.5) * cell
            i = a * side + b
            coeffs[i, :, 0] = scale * (dist + nx * cx + ny * cy)
            coeffs[i, :, 1] = -scale * nx
            coeffs[i, :, 2] = -scale * ny
    return coeffs


def segment_with_trace(roi, hyper: FitHyper = FitHyper()):
    """Fit a model to ``roi``; return ``(model, energies)``.

    Steps follow the gradient scaled to unit max-norm, so ``learning_rate``
    bounds the change of any single coefficient (a face moves about half a
    pixel per unit of bias). A trial step is halved, at most ``max_halvings``
    times, until the energy does not increase; if no acceptable step exists
    the fit stops. The next iteration starts from twice the accepted step,
    capped at ``learning_rate``.
    """
    img = roi_pixels(roi)
    h, w = img.shape
    coords = pixel_coords(w, h)
    coeffs = grid_init(w, h)
    e, grad = energy_and_gradient(coeffs, img, coords)
    if not math.isfinite(e):
        raise DnsmFitError(0, e)
    trace = [e]
    rate = hyper.learning_rate
    for it in range(1, hyper.max_iters + 1):
        gmax = float(np.max(np.abs(grad)))
        if gmax == 0.0:
            break
        direction = grad / gmax
        for _ in range(hyper.max_halvings + 1):
            trial = coeffs - rate * direction
            e_new = _energy_at(trial, img, coords)
            if not math.isfinite(e_new):
                raise DnsmFitError(it, e_new)
            if e_new <= e:
                break
            rate *= 0.5
        else:
            break
        rel = abs(e - e_new) / max(abs(e), 1e-300)
        coeffs = trial
        e, grad = energy_and_gradient(coeffs, img, coords)
        trace.append(e)
        rate = min(2.0 * rate, hyper.learning_rate)
        if rel < hyper.tol:
            break
    return DnsmModel(coeffs), trace


def _energy_at(coeffs, img, coords):
    I = img.ravel()
    _, _, f = _forward(coeffs, *coords)
    c1, c2 = region_means(I, f)
    return float(np.sum(f * (I - c1) ** 2 + (1.0 - f) * (I - c2) ** 2))


def segment(roi, hyper: FitHyper = FitHyper()) -> DnsmModel:
    return segment_with_trace(roi, hyper)[0]


def binarize(model: DnsmModel, width: int, height: int, threshold: float = 0.5) -> np.ndarray:
    """Foreground where f at the pixel center reaches ``threshold``."""
    if width < 1 or height < 1:
        raise InvalidInputError("binarize needs positive dimensions")
    x, y = pixel_coords(width, height)
    # compare log(1 - f) with log(1 - threshold): 1 - f is a product of tiny
    # terms near saturated polytopes and would round f to exactly 1
    with np.errstate(divide="ignore"):
        return (_log_complement(model.coeffs, x, y) <= math.log1p(-threshold)
                if threshold < 1.0 else np.zeros(x.size, dtype=bool)).reshape(height, width)


def _log_complement(coeffs, x, y):
    """log(1 - f) evaluated without forming f."""
    basis = np.stack([np.ones_like(x), x, y])
    z = (coeffs.reshape(-1, 3) @ basis).reshape(coeffs.shape[0], coeffs.shape[1], -1)
    s = np.logaddexp(0.0, -z).sum(axis=1)  # -log g per polytope
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-s)).sum(axis=0)
