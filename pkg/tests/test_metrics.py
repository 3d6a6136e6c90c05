from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debskit.errors import ValidationError
from debskit.metrics import PSNR_CAP, compare, psnr, ssim
from oracles import gaussian_ssim_const

C1, C2 = 1e-4, 9e-4


def test_psnr_examples(rng):
    a = rng.uniform(0.1, 0.9, size=(8, 8, 3))
    assert psnr(a, a) == PSNR_CAP == 99.0
    assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=0.01)
    assert psnr(a, a + 1 / 255) == pytest.approx(48.131, abs=0.01)
    assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValidationError):
        psnr(a, a[:4])


def test_psnr_decreases_with_noise(rng):
    a = rng.uniform(size=(16, 16, 3))
    n = rng.uniform(-1, 1, size=a.shape)
    values = [psnr(a, a + s * n) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(values, values[1:]))
    b = a + 0.03 * n
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identical_and_constants(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    s = ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    assert s == pytest.approx(C1 / (1 + C1), abs=1e-6)
    assert s == pytest.approx(gaussian_ssim_const(C1, C2, 0.0, 1.0), abs=1e-9)
    assert s == pytest.approx(9.999e-5, abs=1e-8)


def test_ssim_small_image_rejected():
    with pytest.raises(ValidationError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 14, 15, 3))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9
    assert ssim(a, b) <= 1.0


def test_ssim_matches_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    a = rng.uniform(size=(24, 31, 3))
    b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
    ref = metrics.structural_similarity(a, b, data_range=1.0, channel_axis=2, gaussian_weights=True,
                                        sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)
    assert psnr(a, b) == pytest.approx(metrics.peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-9)


def test_compare_report(rng):
    a = rng.uniform(size=(12, 12, 3))
    rep = compare(a, a)
    assert rep.to_dict() == {"psnr": 99.0, "ssim": pytest.approx(1.0)}
