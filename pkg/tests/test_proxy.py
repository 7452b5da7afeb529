import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iqarobust.metrics import ProxyScores, mse, proxy_scores, ssim


def ssim_oracle(ref, att):
    """Loop-by-loop SSIM on BT.601 luma, written independently of the vectorised code."""
    def luma(im):
        return [[0.299 * im[i][j][0] + 0.587 * im[i][j][1] + 0.114 * im[i][j][2]
                 for j in range(len(im[0]))] for i in range(len(im))]

    x, y = luma(ref.tolist()), luma(att.tolist())
    size, sigma = 11, 1.5
    kern = [[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * sigma * sigma)) for j in range(size)]
            for i in range(size)]
    total = sum(map(sum, kern))
    kern = [[v / total for v in row] for row in kern]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for r in range(len(x) - size + 1):
        for c in range(len(x[0]) - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(size):
                for j in range(size):
                    w = kern[i][j]
                    a, b = x[r + i][c + j], y[r + i][c + j]
                    mx += w * a
                    my += w * b
                    sxx += w * a * a
                    syy += w * b * b
                    sxy += w * a * b
            sxx -= mx * mx
            syy -= my * my
            sxy -= mx * my
            vals.append(((2 * mx * my + c1) * (2 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(vals) / len(vals)


def test_identical_images():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    p = proxy_scores(img, img)
    assert p.mse == 0.0
    assert p.psnr == math.inf
    assert p.ssim == pytest.approx(1.0, abs=1e-12)
    assert p.to_dict()["psnr"] == "inf"
    assert ProxyScores.from_dict(p.to_dict()) == p


def test_uniform_offset():
    img = np.random.default_rng(1).uniform(0.1, 0.8, size=(16, 16, 3))
    p = proxy_scores(img, img + 0.1)
    assert p.mse == pytest.approx(0.01, rel=1e-12)
    assert p.psnr == pytest.approx(20.0, rel=1e-12)


def test_negative_image_ssim_against_scalar_oracle(reference_image):
    neg = 1.0 - reference_image
    value = ssim(reference_image, neg)
    assert value < 0.1
    assert value == pytest.approx(ssim_oracle(reference_image, neg), abs=1e-12)


def test_ssim_matches_oracle_on_random_pair():
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(14, 13, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-12)


def test_per_channel_mode_differs_from_luma():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(16, 16, 3))
    b = a.copy()
    b[..., 2] = rng.uniform(size=(16, 16))
    assert ssim(a, b, luma=False) < ssim(a, b)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        proxy_scores(np.zeros((16, 16, 3)), np.zeros((16, 15, 3)))


images = arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1))


@settings(max_examples=40, deadline=None)
@given(images, images)
def test_proxy_identities(a, b):
    p = proxy_scores(a, b)
    assert p.mse >= 0
    if p.mse > 0:
        assert p.psnr == pytest.approx(-10 * math.log10(p.mse))
    assert p.ssim <= 1.0 + 1e-12
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert mse(a, b) == mse(b, a)
