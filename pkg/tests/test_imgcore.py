import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from spinelab.imgcore import (
    PHANTOM_CLASSES,
    ImageStack,
    InvalidInputError,
    PgmFormatError,
    PhantomSpec,
    encode_pgm,
    extract_roi,
    gen_phantom,
    median_filter,
    mip,
    parse_pgm,
    phantom_geometry,
    phantom_mask,
    phantom_spec_from_ini,
    read_pgm,
    sample_phantom_spec,
    write_pgm,
)

unit_images = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                     elements=st.floats(0, 1))


def median_oracle(img, r):
    h, w = img.shape
    out = np.empty_like(img)
    for y in range(h):
        for x in range(w):
            vals = sorted(img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)]
                          for dy in range(-r, r + 1) for dx in range(-r, r + 1))
            out[y, x] = vals[len(vals) // 2]
    return out


def mip_oracle(slices):
    h, w = slices[0].shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = max(s[y, x] for s in slices)
    return out


# -------------------------------------------------------------- median / mip


def test_median_constant():
    img = np.full((7, 9), 0.5)
    assert np.array_equal(median_filter(img, 1), img)


def test_median_removes_single_outlier():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    assert np.array_equal(median_filter(img, 1), np.zeros((5, 5)))
    assert np.array_equal(median_oracle(img, 1), np.zeros((5, 5)))


def test_median_matches_sort_oracle(rng):
    img = rng.random((16, 16))
    assert np.array_equal(median_filter(img, 2), median_oracle(img, 2))


@pytest.mark.parametrize("bad", [np.zeros((0, 4)), np.zeros(5)])
def test_median_rejects_empty(bad):
    with pytest.raises(InvalidInputError):
        median_filter(bad, 1)


def test_median_rejects_radius_zero():
    with pytest.raises(InvalidInputError):
        median_filter(np.zeros((3, 3)), 0)


@given(unit_images, st.integers(1, 3))
def test_median_range_and_idempotent_on_constant(img, r):
    out = median_filter(img, r)
    assert out.shape == img.shape
    assert out.min() >= img.min() and out.max() <= img.max()
    c = np.full_like(img, img.flat[0])
    assert np.array_equal(median_filter(median_filter(c, r), r), c)


def test_mip_examples(rng):
    s = rng.random((6, 5))
    assert np.array_equal(mip(ImageStack((s,))), s)
    out = mip([np.full((3, 3), 0.2), np.full((3, 3), 0.7)])
    assert np.array_equal(out, np.full((3, 3), 0.7))
    stack = [rng.random((8, 8)) for _ in range(4)]
    assert np.array_equal(mip(stack), mip_oracle(stack))


def test_mip_rejects_empty():
    with pytest.raises(InvalidInputError):
        mip([])
    with pytest.raises(InvalidInputError):
        ImageStack(())


@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_mip_dominates_and_is_order_free(n, seed):
    r = np.random.default_rng(seed)
    slices = [r.random((4, 6)) for _ in range(n)]
    m = mip(slices)
    assert all(np.all(m >= s) for s in slices)
    assert np.array_equal(m, mip(slices[::-1]))


def test_stack_validation():
    with pytest.raises(InvalidInputError):
        ImageStack((np.zeros((2, 2)), np.zeros((3, 2))))
    with pytest.raises(InvalidInputError):
        ImageStack((np.zeros((2, 2)),), z_spacing=0)
    st_ = ImageStack((np.zeros((2, 3)),))
    assert st_.shape == (2, 3) and st_.z_spacing == 0.3


# ---------------------------------------------------------------------- ROI


def test_roi_angle_zero_is_exact_crop(rng):
    img = rng.random((30, 40))
    roi = extract_roi(img, (5, 7, 12, 9), 0.0)
    assert np.array_equal(roi.image, img[7:16, 5:17])
    assert roi.source_bbox == (5, 7, 12, 9)


def test_roi_180_reverses_both_axes(rng):
    img = rng.random((30, 40))
    roi = extract_roi(img, (5, 7, 12, 9), 180.0)
    crop = img[7:16, 5:17]
    # index-reversal oracle, interior only
    oracle = np.array([[crop[9 - 1 - r, 12 - 1 - c] for c in range(12)] for r in range(9)])
    assert np.allclose(roi.image[1:-1, 1:-1], oracle[1:-1, 1:-1], atol=1e-12)


def test_roi_90_is_rotation_of_square(rng):
    img = rng.random((30, 30))
    roi = extract_roi(img, (4, 6, 11, 11), 90.0)
    crop = img[6:17, 4:15]
    oracle = np.array([[crop[c, 10 - r] for c in range(11)] for r in range(11)])
    assert np.allclose(roi.image[1:-1, 1:-1], oracle[1:-1, 1:-1], atol=1e-12)


def test_roi_rejects_bad_boxes():
    img = np.zeros((10, 10))
    with pytest.raises(InvalidInputError):
        extract_roi(img, (5, 5, 6, 2), 0)
    with pytest.raises(InvalidInputError):
        extract_roi(img, (0, 0, 4, 4), 200)


def test_roi_mask_must_not_touch_border():
    img = np.zeros((20, 20))
    mask = np.zeros((20, 20), dtype=bool)
    mask[8:12, 8:12] = True
    assert extract_roi(img, (4, 4, 12, 12), 0, mask=mask).mask.sum() == 16
    with pytest.raises(InvalidInputError):
        extract_roi(img, (8, 8, 6, 6), 0, mask=mask)


# ---------------------------------------------------------------------- PGM


def test_pgm_p2_example():
    img = parse_pgm(b"P2 2 2 255\n0 255\n128 64\n")
    assert np.array_equal(img.ravel(), [0.0, 1.0, 128 / 255, 64 / 255])


def test_pgm_p5_16bit_byte_oracle():
    samples = [0, 1, 65535, 0x1234]
    payload = b"".join(v.to_bytes(2, "big") for v in samples)
    img = parse_pgm(b"P5\n2 2\n65535\n" + payload)
    assert np.array_equal(img.ravel(), np.array(samples) / 65535.0)


def test_pgm_comments_are_skipped():
    img = parse_pgm(b"P2\n# made by hand\n2 1 # trailing\n10\n5 10\n")
    assert np.array_equal(img, [[0.5, 1.0]])


def test_pgm_round_trip(tmp_path, rng):
    img = rng.random((13, 7))
    write_pgm(img, tmp_path / "a.pgm")
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1 / 255 + 1e-12


def test_pgm_quantization_rounds_half_up():
    data = encode_pgm(np.array([[0.5 / 255, 1.5 / 255, 0.0, 1.0]]))
    assert list(data[-4:]) == [1, 2, 0, 255]


@given(unit_images)
def test_pgm_round_trip_property(img):
    back = parse_pgm(encode_pgm(img))
    assert np.max(np.abs(back - img)) <= 1 / 255 + 1e-12


CORRUPT = [
    (b"", "magic"),
    (b"P6\n2 2\n255\n" + bytes(12), "magic"),
    (b"P3 1 1 255 0 0 0", "magic"),
    (b"PX\n1 1\n255\n\x00", "magic"),
    (b"P5", "width"),
    (b"P5\n", "width"),
    (b"P5\nx 2\n255\n\x00\x00", "width"),
    (b"P5\n0 2\n255\n", "width"),
    (b"P5\n-3 2\n255\n", "width"),
    (b"P5\n2", "height"),
    (b"P5\n2 y\n255\n\x00\x00", "height"),
    (b"P5\n2 0\n255\n", "height"),
    (b"P5\n2 2", "maxval"),
    (b"P5\n2 2\n0\n\x00\x00\x00\x00", "maxval"),
    (b"P5\n2 2\n70000\n" + bytes(8), "maxval"),
    (b"P5\n2 2\n25a\n\x00\x00\x00\x00", "maxval"),
    (b"P5\n2 2\n255\n\x00\x00\x00", "payload"),
    (b"P5\n2 2\n65535\n" + bytes(7), "payload"),
    (b"P2\n2 2\n255\n1 2 3", "payload"),
    (b"P2\n2 2\n10\n1 2 3 11", "payload"),
]


def test_corrupt_corpus_has_twenty_cases():
    assert len(CORRUPT) == 20


@pytest.mark.parametrize("data,field", CORRUPT)
def test_pgm_rejects_corrupt_header(data, field):
    with pytest.raises(PgmFormatError) as exc:
        parse_pgm(data)
    assert exc.value.field == field


# ------------------------------------------------------------------ phantoms


def test_stubby_without_neck_is_a_disk():
    spec = PhantomSpec("stubby", head_radius=8.0, neck_length=0.0, neck_width=5.0, noise_sigma=0.0)
    _, mask = gen_phantom(spec)
    assert abs(mask.sum() - math.pi * 64) <= 0.05 * math.pi * 64


def test_phantom_determinism_and_zero_noise():
    spec = PhantomSpec("mushroom", 8.0, 16.0, 3.0, noise_sigma=0.05, seed=9)
    a, ma = gen_phantom(spec)
    b, mb = gen_phantom(spec)
    assert np.array_equal(a, b) and np.array_equal(ma, mb)
    quiet = PhantomSpec("mushroom", 8.0, 16.0, 3.0, noise_sigma=0.0)
    img, mask = gen_phantom(quiet)
    blurred = ndimage.gaussian_filter(mask.astype(float), 1.0, mode="constant")
    assert np.array_equal(img, np.clip(blurred, 0, 1))


def test_phantom_noise_depends_on_seed():
    a, _ = gen_phantom(PhantomSpec("thin", 3.0, 20.0, 2.0, seed=1))
    b, _ = gen_phantom(PhantomSpec("thin", 3.0, 20.0, 2.0, seed=2))
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("cls", PHANTOM_CLASSES)
@pytest.mark.parametrize("seed", range(10))
def test_phantom_mask_is_connected_and_inside(cls, seed):
    spec = sample_phantom_spec(cls, seed)
    img, mask = gen_phantom(spec)
    _, n = ndimage.label(mask, structure=np.ones((3, 3)))
    assert n == 1
    assert img.min() >= 0 and img.max() <= 1
    border = np.concatenate([mask[0], mask[-1], mask[:, 0], mask[:, -1]])
    assert not border.any()


def test_phantom_geometry_matches_mask():
    spec = PhantomSpec("mushroom", 8.0, 16.0, 3.0)
    (h, w), geom = phantom_geometry(spec)
    mask = phantom_mask(spec)
    assert mask.shape == (h, w)
    rows = np.nonzero(mask.any(axis=1))[0]
    assert rows.max() == geom.neck_rows[1] - 1
    assert rows.max() - geom.head_bottom_row == 16


@pytest.mark.parametrize("kwargs", [
    dict(cls="blob", head_radius=3, neck_length=4, neck_width=2),
    dict(cls="thin", head_radius=0, neck_length=4, neck_width=2),
    dict(cls="thin", head_radius=3, neck_length=0, neck_width=2),
    dict(cls="stubby", head_radius=3, neck_length=5, neck_width=2),
    dict(cls="filopodia", head_radius=3, neck_length=20, neck_width=2),
    dict(cls="mushroom", head_radius=8, neck_length=16, neck_width=3, noise_sigma=-1),
])
def test_phantom_spec_validation(kwargs):
    with pytest.raises(InvalidInputError):
        PhantomSpec(**kwargs)


def test_phantom_spec_from_ini():
    spec = phantom_spec_from_ini("class = mushroom\nhead_radius = 8\nneck_length = 16\n"
                                 "neck_width = 3\nseed = 4\n")
    assert spec == PhantomSpec("mushroom", 8.0, 16.0, 3.0, 0.05, 4)
    with pytest.raises(InvalidInputError):
        phantom_spec_from_ini("class = thin\nhead_radius = 3\n")
