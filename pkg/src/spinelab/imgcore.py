"""Image containers, preprocessing, PGM I/O and the synthetic spine phantom.

Images are plain 2-D ``float64`` numpy arrays with intensities in [0, 1]
(row-major, ``img[row, col]``); binary masks are 2-D ``bool`` arrays. Only
objects that carry metadata beyond the raster get their own class.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

PHANTOM_CLASSES = ("mushroom", "stubby", "thin", "filopodia")

PHANTOM_MARGIN = 6
PHANTOM_BLUR_SIGMA = 1.0


class InvalidInputError(ValueError):
    """Raised when an operation receives data violating its preconditions."""


class PgmFormatError(ValueError):
    """Malformed PGM file. ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"PGM {field}: {message}")
        self.field = field


def as_image(img) -> np.ndarray:
    """Validate and return ``img`` as a float64 2-D array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("image intensities must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class ImageStack:
    """A z-stack of equally sized slices plus its sampling metadata (micrometers)."""

    slices: tuple
    z_spacing: float = 0.3
    lateral_resolution: float = 0.02

    def __post_init__(self):
        if len(self.slices) == 0:
            raise InvalidInputError("an image stack needs at least one slice")
        slices = tuple(as_image(s) for s in self.slices)
        if any(s.shape != slices[0].shape for s in slices):
            raise InvalidInputError("all slices of a stack must share dimensions")
        if self.z_spacing <= 0 or self.lateral_resolution <= 0:
            raise InvalidInputError("stack spacings must be positive")
        object.__setattr__(self, "slices", slices)

    @property
    def shape(self):
        return self.slices[0].shape


@dataclass(frozen=True)
class SpineROI:
    """Rotated crop around one spine.

    ``source_bbox`` is ``(x0, y0, width, height)`` in parent-image pixels.
    """

    image: np.ndarray
    source_bbox: tuple = (0, 0, 0, 0)
    rotation_deg: float = 0.0
    mask: np.ndarray | None = None


def roi_pixels(roi) -> np.ndarray:
    """Accept a :class:`SpineROI` or a bare array and return the raster."""
    if isinstance(roi, SpineROI):
        return as_image(roi.image)
    return as_image(roi)


def median_filter(img, radius: int = 1) -> np.ndarray:
    """Median over a ``(2r+1)^2`` window with clamped (replicated) edges."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError("median_filter needs a non-empty 2-D image")
    if radius < 1:
        raise InvalidInputError("median_filter radius must be >= 1")
    return ndimage.median_filter(arr, size=2 * radius + 1, mode="nearest")


def mip(stack) -> np.ndarray:
    """Maximum intensity projection of an :class:`ImageStack` or a slice list."""
    slices = stack.slices if isinstance(stack, ImageStack) else list(stack)
    if len(slices) == 0:
        raise InvalidInputError("cannot project an empty stack")
    return np.max(np.stack([np.asarray(s, dtype=np.float64) for s in slices]), axis=0)


def extract_roi(img, bbox, angle_deg: float = 0.0, mask=None) -> SpineROI:
    """Crop ``bbox = (x0, y0, w, h)`` from ``img`` rotated about the box center.

    Positive angles rotate the content counter-clockwise as displayed
    (rows growing downwards), so ``angle_deg=90`` on a square box equals
    ``np.rot90(crop)``. Samples are bilinear; outside the parent image they
    read 0. If ``mask`` is given it is rotated with nearest-neighbour sampling
    and must not touch the ROI border.
    """
    arr = as_image(img)
    x0, y0, w, h = (int(v) for v in bbox)
    H, W = arr.shape
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise InvalidInputError(f"bbox {bbox} is not inside the {W}x{H} image")
    if not -180.0 <= angle_deg <= 180.0:
        raise InvalidInputError("angle must lie in [-180, 180] degrees")

    coords = _rotation_coords(x0, y0, w, h, angle_deg)
    out = ndimage.map_coordinates(arr, coords, order=1, mode="constant", cval=0.0)
    out = np.clip(out, 0.0, 1.0)

    roi_mask = None
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != arr.shape:
            raise InvalidInputError("mask and image dimensions differ")
        roi_mask = ndimage.map_coordinates(
            m.astype(np.float64), np.rint(coords), order=0, mode="constant", cval=0.0
        ) > 0.5
        border = np.concatenate([roi_mask[0], roi_mask[-1], roi_mask[:, 0], roi_mask[:, -1]])
        if border.any():
            raise InvalidInputError("spine foreground touches the ROI border")
    return SpineROI(image=out, source_bbox=(x0, y0, w, h), rotation_deg=float(angle_deg), mask=roi_mask)


def _rotation_coords(x0, y0, w, h, angle_deg):
    cx = x0 + (w - 1) / 2.0
    cy = y0 + (h - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = cols - (w - 1) / 2.0
    dy = rows - (h - 1) / 2.0
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    # inverse mapping: output offset -> source offset
    src_x = cx + c * dx - s * dy
    src_y = cy + s * dx + c * dy
    # snap values that are integral up to rounding so 90/180 degree turns are exact
    for a in (src_x, src_y):
        near = np.abs(a - np.rint(a)) < 1e-9
        a[near] = np.rint(a[near])
    return np.array([src_y, src_x])


# --------------------------------------------------------------------------- PGM


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM file, scaling intensities to [0, 1] by maxval."""
    return parse_pgm(Path(path).read_bytes())


def parse_pgm(data: bytes) -> np.ndarray:
    pos = 0
    tokens = []
    # magic, width, height, maxval
    while len(tokens) < 4:
        pos = _skip_ws_and_comments(data, pos)
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace() and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            name = ("magic", "width", "height", "maxval")[len(tokens)]
            raise PgmFormatError(name, "missing (file truncated)")
        tokens.append(data[start:pos])

    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError("magic", f"expected P2 or P5, got {magic[:8]!r}")
    width = _header_int(tokens[1], "width", 1)
    height = _header_int(tokens[2], "height", 1)
    maxval = _header_int(tokens[3], "maxval", 1)
    if maxval > 65535:
        raise PgmFormatError("maxval", f"{maxval} exceeds 65535")

    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(data) or not chr(data[pos]).isspace():
            raise PgmFormatError("payload", "missing separator after maxval")
        pos += 1
        nbytes = 2 if maxval > 255 else 1
        payload = data[pos:]
        if len(payload) < count * nbytes:
            raise PgmFormatError(
                "payload", f"expected {count * nbytes} bytes, found {len(payload)}"
            )
        dtype = ">u2" if nbytes == 2 else "u1"
        values = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float64)
    else:
        fields = data[pos:].split()
        fields = [f for f in fields if not f.startswith(b"#")]
        if len(fields) < count:
            raise PgmFormatError("payload", f"expected {count} samples, found {len(fields)}")
        try:
            values = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError as exc:
            raise PgmFormatError("payload", f"non-integer sample ({exc})") from None
    if values.size and values.max() > maxval:
        raise PgmFormatError("payload", "sample exceeds maxval")
    return (values / maxval).reshape(height, width)


def _skip_ws_and_comments(data, pos):
    while pos < len(data):
        ch = data[pos]
        if chr(ch).isspace():
            pos += 1
        elif ch == ord("#"):
            while pos < len(data) and data[pos] not in (10, 13):
                pos += 1
        else:
            break
    return pos


def _header_int(token, name, minimum):
    try:
        value = int(token.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise PgmFormatError(name, f"not an integer: {token[:16]!r}") from None
    if value < minimum:
        raise PgmFormatError(name, f"must be >= {minimum}, got {value}")
    return value


def write_pgm(img, path) -> None:
    """Write a binary P5 file with maxval 255 (round-half-up quantization)."""
    Path(path).write_bytes(encode_pgm(img))


def encode_pgm(img) -> bytes:
    arr = as_image(img)
    q = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    return header + q.tobytes()


# ----------------------------------------------------------------------- phantom


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of a synthetic spine; lengths in pixels."""

    cls: str
    head_radius: float
    neck_length: float
    neck_width: float
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.cls not in PHANTOM_CLASSES:
            raise InvalidInputError(f"unknown spine class {self.cls!r}")
        if self.head_radius <= 0 or self.neck_width <= 0:
            raise InvalidInputError("head_radius and neck_width must be positive")
        if self.neck_length < 0 or self.noise_sigma < 0:
            raise InvalidInputError("neck_length and noise_sigma must be non-negative")
        if self.cls != "stubby" and self.neck_length <= 0:
            raise InvalidInputError(f"{self.cls} spines need a positive neck_length")
        if self.cls == "stubby" and self.neck_length > self.head_radius:
            raise InvalidInputError("stubby spines need neck_length <= head_radius")
        if self.cls == "filopodia" and self.head_radius > self.neck_width:
            raise InvalidInputError("filopodia need head_radius <= neck_width")


@dataclass
class PhantomGeometry:
    """Where the generator put things; ground truth for tests."""

    head_center: tuple  # (row, col)
    head_bottom_row: int
    neck_rows: tuple = field(default=(0, 0))  # half-open row range


def phantom_geometry(spec: PhantomSpec):
    """Canvas shape and ground-truth geometry for ``spec``."""
    r = spec.head_radius if spec.cls != "filopodia" else 0.0
    ri = int(math.ceil(r))
    half_w = int(math.ceil(max(r, spec.neck_width / 2.0)))
    nl = int(round(spec.neck_length))
    width = 2 * half_w + 1 + 2 * PHANTOM_MARGIN
    height = 2 * ri + 1 + nl + 2 * PHANTOM_MARGIN
    cy = PHANTOM_MARGIN + ri
    cx = PHANTOM_MARGIN + half_w
    bottom = cy + int(math.floor(r))
    geom = PhantomGeometry(head_center=(cy, cx), head_bottom_row=bottom,
                           neck_rows=(bottom + 1, bottom + 1 + nl))
    return (height, width), geom


def phantom_mask(spec: PhantomSpec) -> np.ndarray:
    (height, width), geom = phantom_geometry(spec)
    cy, cx = geom.head_center
    rows, cols = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width), dtype=bool)
    if spec.cls != "filopodia":
        mask |= (rows - cy) ** 2 + (cols - cx) ** 2 <= spec.head_radius ** 2
    nl = int(round(spec.neck_length))
    if nl > 0:
        nw = max(1, int(round(spec.neck_width)))
        left = cx - nw // 2
        # the neck starts at the head center so the union stays connected
        top = cy if spec.cls != "filopodia" else geom.neck_rows[0]
        mask[top:geom.neck_rows[1], left:left + nw] = True
    return mask


def gen_phantom(spec: PhantomSpec):
    """Render ``spec`` to ``(intensity, mask)``; deterministic given ``spec.seed``."""
    mask = phantom_mask(spec)
    img = ndimage.gaussian_filter(mask.astype(np.float64), PHANTOM_BLUR_SIGMA, mode="constant")
    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * box_muller_normal(spec.seed, img.shape)
    return np.clip(img, 0.0, 1.0), mask


def box_muller_normal(seed: int, shape) -> np.ndarray:
    """Standard normals via Box-Muller over PCG64 uniforms."""
    n = int(np.prod(shape))
    rng = np.random.Generator(np.random.PCG64(seed))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
    return z[:n].reshape(shape)


def sample_phantom_spec(cls: str, seed: int, noise_sigma: float = 0.05) -> PhantomSpec:
    """Draw class-consistent geometry for ``cls`` from fixed ranges."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if cls == "mushroom":
        r = rng.uniform(6, 10)
        nl = rng.integers(12, 21)
        nw = rng.integers(2, 4)
    elif cls == "stubby":
        r = rng.uniform(6, 10)
        nl = rng.integers(0, 5)
        nw = rng.integers(4, 7)
    elif cls == "thin":
        r = rng.uniform(2, 4)
        nl = rng.integers(14, 25)
        nw = rng.integers(1, 3)
    elif cls == "filopodia":
        nl = rng.integers(16, 29)
        nw = rng.integers(2, 4)
        r = 1.0
    else:
        raise InvalidInputError(f"unknown spine class {cls!r}")
    return PhantomSpec(cls, float(r), float(nl), float(nw), noise_sigma, seed)


def phantom_spec_from_ini(text: str, section: str = "phantom") -> PhantomSpec:
    """Parse ``key = value`` text (with or without a section header)."""
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = f"[{section}]\n" + text
    parser.read_string(text)
    sec = parser[section]
    try:
        return PhantomSpec(
            cls=sec.get("class"),
            head_radius=sec.getfloat("head_radius"),
            neck_length=sec.getfloat("neck_length"),
            neck_width=sec.getfloat("neck_width"),
            noise_sigma=sec.getfloat("noise_sigma", 0.05),
            seed=sec.getint("seed", 0),
        )
    except TypeError:
        raise InvalidInputError("phantom spec is missing a required key") from None
