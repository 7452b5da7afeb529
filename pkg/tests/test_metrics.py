import numpy as np
import pytest

from iqarobust.gradcore.gradcheck import check_gradient, gradient_check
from iqarobust.metrics import (
    CalibrationError,
    IncompatibleImage,
    InputPolicy,
    MetricFault,
    MetricModel,
    SHIPPED,
    branch_signature,
    calibrate_range,
    get_metric,
    score,
    score_and_gradient,
    score_gradient,
)


@pytest.fixture(scope="module")
def shipped():
    return {name: get_metric(name) for name in SHIPPED}


def test_mean_metric_on_constant_image():
    assert score(get_metric("toy-mean"), np.full((4, 4, 3), 0.5)) == 0.5


@pytest.mark.parametrize("name", SHIPPED)
def test_golden_score(shipped, golden, reference_image, name):
    assert score(shipped[name], reference_image) == pytest.approx(golden["score"][name], rel=1e-12)


@pytest.mark.parametrize("name", SHIPPED)
def test_scoring_twice_is_identical(shipped, reference_image, name):
    m = shipped[name]
    assert score(m, reference_image) == score(m, reference_image.copy())


def test_mean_metric_gradient_is_uniform():
    g = score_gradient(get_metric("toy-mean"), np.random.default_rng(0).uniform(size=(5, 6, 3)))
    np.testing.assert_allclose(g, 1 / 90, rtol=1e-14)


def test_saturated_clamp_has_zero_gradient():
    g = score_gradient(get_metric("toy-saturated"), np.random.default_rng(0).uniform(size=(5, 6, 3)))
    assert not g.any()


@pytest.mark.parametrize("name", SHIPPED)
def test_gradient_matches_finite_differences_on_16px_crops(shipped, test_images, name):
    m = shipped[name]
    rng = np.random.default_rng(99)
    checked = skipped = 0
    for img in test_images[:6]:
        top, left = rng.integers(0, 17, size=2)
        crop = img[top:top + 16, left:left + 16]
        res = gradient_check(lambda x: score(m, x), score_gradient(m, crop), crop, rng,
                             n_coords=32, branch=lambda x: branch_signature(m, x))
        assert res.error < 1e-3
        checked += res.checked
        skipped += res.skipped
    assert skipped <= 0.05 * (checked + skipped)


def test_center_crop_gradient_is_zero_outside_crop(shipped, reference_image):
    m = shipped["patch-weighted"]
    assert m.policy == InputPolicy("center-crop", 24)
    g = score_gradient(m, reference_image)
    inside = np.zeros(g.shape, bool)
    inside[4:28, 4:28] = True
    assert not g[~inside].any()
    assert np.count_nonzero(g[inside]) > 0.9 * inside.sum()


def test_center_crop_scores_the_cropped_region(shipped, reference_image):
    m = shipped["patch-weighted"]
    assert score(m, reference_image) == score(m, reference_image[4:28, 4:28])
    changed = reference_image.copy()
    changed[:2] = 0.0
    assert score(m, changed) == score(m, reference_image)


def test_resize_policy_gradient_matches_finite_differences(rng):
    base = get_metric("tiny-cnn-nr")
    m = MetricModel("resized", base.build, policy=InputPolicy("resize", 12))
    img = rng.uniform(size=(20, 18, 3))
    err = check_gradient(lambda x: score(m, x), score_gradient(m, img), img, rng, n_coords=32)
    assert err < 1e-3


def test_score_and_gradient_agree_with_separate_calls(shipped, reference_image):
    m = shipped["tiny-cnn-nr"]
    s, g = score_and_gradient(m, reference_image)
    assert s == score(m, reference_image)
    np.testing.assert_array_equal(g, score_gradient(m, reference_image))


class TestCalibration:
    def test_min_max(self):
        m = get_metric("toy-mean")
        images = [np.full((4, 4, 3), v) for v in (0.2, 0.7, 0.4)]
        assert calibrate_range(m, images) == pytest.approx((0.2, 0.7), rel=1e-15)
        assert m.declared_range == pytest.approx((0.2, 0.7), rel=1e-15)
        assert m.range == pytest.approx(0.5)

    def test_single_image_is_degenerate(self):
        with pytest.raises(CalibrationError, match="constant"):
            calibrate_range(get_metric("toy-mean"), [np.full((4, 4, 3), 0.3)])

    def test_empty_dataset(self):
        with pytest.raises(CalibrationError, match="empty"):
            calibrate_range(get_metric("toy-mean"), [])

    @pytest.mark.parametrize("name", SHIPPED)
    def test_golden_range_over_bundled_calibration_set(self, golden, calibration_images, name):
        assert len(calibration_images) == 32
        lo, hi = calibrate_range(get_metric(name), calibration_images)
        assert lo == pytest.approx(golden["calibration_range"][name][0], rel=1e-12)
        assert hi == pytest.approx(golden["calibration_range"][name][1], rel=1e-12)


class TestErrors:
    def test_wrong_channel_count(self):
        with pytest.raises(IncompatibleImage):
            score(get_metric("tiny-cnn-nr"), np.zeros((16, 16)))

    def test_image_too_small_for_network(self):
        with pytest.raises(IncompatibleImage):
            score(get_metric("patch-weighted"), np.zeros((2, 2, 3)))

    def test_non_finite_score_is_a_fault(self):
        m = MetricModel("broken", lambda g, x: g.div(g.sum(x), g.sum(g.scale(x, 0.0))))
        with pytest.raises(MetricFault):
            score(m, np.ones((4, 4, 3)))

    def test_unknown_metric(self):
        with pytest.raises(KeyError, match="unknown metric"):
            get_metric("nope")

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            InputPolicy("stretch", 3)
