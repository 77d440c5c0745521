import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progvol.errors import DimensionMismatch, TooSmall
from progvol.metrics import SSIM_K1, format_db, gaussian_window, psnr, ssim

skimage_metrics = pytest.importorskip("skimage.metrics")


def test_psnr_known_values():
    a = np.zeros((4, 4, 3))
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, a) == math.inf
    assert psnr(a + 2.0, a, peak=2.0) == pytest.approx(0.0)
    with pytest.raises(DimensionMismatch):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_identity_and_constants():
    rng = np.random.default_rng(0)
    img = rng.random((20, 24, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    c1 = SSIM_K1 ** 2
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(c1 / (1 + c1), abs=1e-6)


def test_ssim_too_small():
    with pytest.raises(TooSmall):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))


def test_gaussian_window():
    g = gaussian_window()
    assert len(g) == 11 and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max() and g[0] == pytest.approx(g[10])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssim_matches_reference_library(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((23, 19))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = skimage_metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                                use_sample_covariance=False, data_range=1.0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_format_db():
    assert format_db(math.inf) == "inf"
    assert format_db(20.0) == "20.0000"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((14, 17, 3)), rng.random((14, 17, 3))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
