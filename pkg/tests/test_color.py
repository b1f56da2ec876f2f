import numpy as np
import pytest

from oracles import CIEDE2000_PAIRS, ciede2000_scalar, srgb_to_lab_scalar
from slic.color import (
    ColorSpace,
    PlanarImage,
    ciede2000,
    ciede2000_array,
    mean_ciede2000,
    merge_yuv,
    rgb_array_to_lab,
    rgb_to_lab,
    rgb_to_yuv,
    split_yuv,
    yuv_to_rgb,
)
from slic.errors import UsageError


def test_yuv_round_trip_on_random_pixels(rng):
    img = PlanarImage(ColorSpace.RGB, rng.random((3, 100, 100)))
    back = yuv_to_rgb(rgb_to_yuv(img))
    np.testing.assert_allclose(back.data, img.data, atol=1e-9)


def test_yuv_of_grey_has_centred_chroma():
    yuv = rgb_to_yuv(PlanarImage(ColorSpace.RGB, np.full((3, 2, 2), 0.3)))
    np.testing.assert_allclose(yuv.data[0], 0.3)
    np.testing.assert_allclose(yuv.data[1:], 0.5)


def test_split_merge_yuv():
    img = rgb_to_yuv(PlanarImage(ColorSpace.RGB, np.random.default_rng(0).random((3, 4, 5))))
    luma, chroma = split_yuv(img)
    assert luma.space is ColorSpace.LUMA and luma.data.shape == (1, 4, 5)
    assert chroma.space is ColorSpace.CHROMA and chroma.data.shape == (2, 4, 5)
    np.testing.assert_array_equal(merge_yuv(luma, chroma).data, img.data)


def test_wrong_space_is_rejected():
    with pytest.raises(UsageError):
        yuv_to_rgb(PlanarImage(ColorSpace.RGB, np.zeros((3, 2, 2))))
    with pytest.raises(UsageError):
        PlanarImage(ColorSpace.LUMA, np.zeros((3, 2, 2)))


@pytest.mark.parametrize(
    "rgb, lab",
    [((1.0, 1.0, 1.0), (100.0, 0.0, 0.0)), ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))],
)
def test_lab_anchor_points(rgb, lab):
    got = rgb_array_to_lab(np.array(rgb).reshape(3, 1, 1))[:, 0, 0]
    np.testing.assert_allclose(got, lab, atol=1e-2)


def test_lab_matches_scalar_oracle(rng):
    rgb = rng.random((3, 5, 5))
    lab = rgb_to_lab(PlanarImage(ColorSpace.RGB, rgb)).data
    for i in range(5):
        for j in range(5):
            np.testing.assert_allclose(lab[:, i, j], srgb_to_lab_scalar(*rgb[:, i, j]), atol=1e-3)


def test_lab_grey_is_neutral():
    lab = rgb_array_to_lab(np.full((3, 1, 1), 0.5))[:, 0, 0]
    assert abs(lab[1]) < 1e-2 and abs(lab[2]) < 1e-2
    assert 53.0 < lab[0] < 54.0


@pytest.mark.parametrize("lab1, lab2, expected", CIEDE2000_PAIRS)
def test_ciede2000_published_pairs(lab1, lab2, expected):
    assert ciede2000(lab1, lab2) == pytest.approx(expected, abs=1e-4)
    assert ciede2000(lab1, lab2) == pytest.approx(ciede2000_scalar(lab1, lab2), abs=1e-9)


def test_ciede2000_symmetry_and_identity(rng):
    a = rng.uniform([0, -100, -100], [100, 100, 100], (500, 3)).T
    b = rng.uniform([0, -100, -100], [100, 100, 100], (500, 3)).T
    np.testing.assert_allclose(ciede2000_array(a, b), ciede2000_array(b, a), atol=1e-9)
    np.testing.assert_allclose(ciede2000_array(a, a), 0.0, atol=1e-12)
    want = [ciede2000_scalar(a[:, k], b[:, k]) for k in range(0, 500, 25)]
    np.testing.assert_allclose(ciede2000_array(a, b)[::25], want, atol=1e-9)


def test_mean_ciede2000_equals_pixel_loop(rng):
    x = PlanarImage(ColorSpace.RGB, rng.random((3, 6, 7)))
    y = PlanarImage(ColorSpace.RGB, rng.random((3, 6, 7)))
    la, lb = rgb_to_lab(x).data, rgb_to_lab(y).data
    loop = np.mean([ciede2000(la[:, i, j], lb[:, i, j]) for i in range(6) for j in range(7)])
    assert mean_ciede2000(x, y) == pytest.approx(loop, abs=1e-9)
    assert mean_ciede2000(x, x) == 0.0
