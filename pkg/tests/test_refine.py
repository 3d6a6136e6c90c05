from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from debskit.refine import StructuringElement, erode, refined_template, refined_templates
from debskit.template import make_template
from oracles import disk_weights, naive_min_filter


def bright_square_scene(size=25, side=9):
    img = np.full((size, size, 3), 0.1)
    d = np.full((size, size), 0.1)
    lo = (size - side) // 2
    img[lo:lo + side, lo:lo + side] = 0.95
    d[lo:lo + side, lo:lo + side] = 1.0
    return img, d, lo, side


def ring_mask(size, lo, side, width=2):
    inner = np.zeros((size, size), dtype=bool)
    inner[lo:lo + side, lo:lo + side] = True
    return ndimage.binary_dilation(inner, np.ones((3, 3)), iterations=width) & ~inner


def test_structuring_element_is_disk():
    se = StructuringElement.disk(5)
    assert np.array_equal(se.footprint, disk_weights(5) > 0)
    assert np.array_equal(se.footprint, se.footprint.T) and se.footprint.any()


def test_erode_constant_and_square():
    x = np.full((6, 6, 3), 0.4)
    np.testing.assert_array_equal(erode(x, StructuringElement.disk(3)), x)
    sq = np.zeros((7, 7))
    sq[1:6, 1:6] = 1.0
    out = erode(sq, StructuringElement.disk(3))
    expect = np.zeros((7, 7))
    expect[2:5, 2:5] = 1.0
    np.testing.assert_array_equal(out, expect)


@pytest.mark.parametrize("k", [3, 5])
def test_erode_matches_min_filter(rng, k):
    x = rng.uniform(size=(9, 8, 3))
    fp = disk_weights(k) > 0
    out = erode(x, StructuringElement.disk(k))
    for c in range(3):
        np.testing.assert_array_equal(out[:, :, c], naive_min_filter(x[:, :, c], fp))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]))
def test_erode_monotone(seed, k):
    x = np.random.default_rng(seed).uniform(size=(8, 8))
    se = StructuringElement.disk(k)
    once = erode(x, se)
    assert np.all(erode(once, se) <= once)
    assert np.all(once <= x)


def test_empty_mask_reduces_to_plain_template(rng):
    img = rng.uniform(size=(20, 20, 3))
    d = np.full((20, 20), 0.2)
    np.testing.assert_allclose(refined_template(img, d, 5).image, make_template(img, 5).image, atol=1e-6)


def test_full_mask_stays_valid(rng):
    img = rng.uniform(size=(12, 12, 3))
    out = refined_template(img, np.ones((12, 12)), 5).image
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1


def test_ring_leakage_reduced():
    img, d, lo, side = bright_square_scene()
    ring = ring_mask(img.shape[0], lo, side)
    refined = refined_template(img, d, 5).image[ring].mean()
    plain = make_template(img, 5).image[ring].mean()
    assert refined < plain - 1e-4


def test_far_pixels_unchanged(rng):
    n, k = 40, 5
    img = rng.uniform(0.0, 0.5, size=(n, n, 3))
    d = np.zeros((n, n))
    d[15:24, 15:24] = 1.0
    img[15:24, 15:24] = 0.9
    mask = d >= 0.6
    edge = mask ^ ndimage.binary_erosion(mask, border_value=0) | (ndimage.binary_dilation(mask) & ~mask)
    near = ndimage.binary_dilation(edge, np.ones((3, 3)), iterations=k)
    diff = np.abs(refined_template(img, d, k).image - make_template(img, k).image)
    assert np.max(diff[~near]) <= 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_brighter_focus_never_leaks_more(seed):
    rng = np.random.default_rng(seed)
    n, k = 24, 5
    img = rng.uniform(0.0, 0.4, size=(n, n, 3))
    y, x = rng.integers(4, 14, size=2)
    d = np.zeros((n, n))
    d[y:y + 7, x:x + 7] = 1.0
    img[y:y + 7, x:x + 7] = rng.uniform(0.6, 1.0, size=3)
    mask = d >= 0.6
    band = ndimage.binary_dilation(mask, np.ones((3, 3)), iterations=k) & ~mask
    refined = refined_template(img, d, k).image[band].mean()
    plain = make_template(img, k).image[band].mean()
    assert refined <= plain + 1e-9


def test_intermediates_and_options(rng):
    img, d, _, _ = bright_square_scene()
    steps = {}
    out = refined_template(img, d, 5, intermediates=steps)
    assert list(steps) == ["1_mask", "2_out_of_focus", "3_eroded", "4_focus_part",
                           "5_template_composed", "6_template_plain",
                           "7_template_composed_masked", "8_refined"]
    np.testing.assert_array_equal(steps["8_refined"], out.image)
    assert np.all(steps["7_template_composed_masked"][d >= 0.6] == 0)
    lit = refined_template(img, d, 5, literal_sum=True).image
    assert np.all(lit >= out.image - 1e-12)
    other = refined_template(img, d, 5, erode_k=3).image
    assert other.shape == out.image.shape
    assert len(refined_templates(img, d, [3, 5])) == 2
