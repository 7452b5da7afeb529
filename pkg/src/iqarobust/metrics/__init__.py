"""Metrics under attack and full-reference degradation proxies."""

from iqarobust.metrics.base import (
    CalibrationError,
    IncompatibleImage,
    InputPolicy,
    MetricFault,
    MetricModel,
    branch_signature,
    calibrate_range,
    score,
    score_and_gradient,
    score_gradient,
)
from iqarobust.metrics.proxy import ProxyScores, mse, proxy_scores, psnr_from_mse, ssim
from iqarobust.metrics.zoo import NaturalnessEpsilon, load_shipped, mean_pixel, saturated_clamp

SHIPPED = ("tiny-cnn-nr", "patch-weighted", "naturalness-lite")
TOYS = {"toy-mean": mean_pixel, "toy-saturated": saturated_clamp}
_CUSTOM = {}


def register_metric(name, factory):
    """Make ``factory() -> MetricModel`` available to configs under ``name``."""
    if name in SHIPPED or name in TOYS:
        raise ValueError(f"{name!r} is a built-in metric name")
    _CUSTOM[name] = factory


def registered_names():
    return list(SHIPPED) + list(TOYS) + list(_CUSTOM)


def get_metric(name, weights_dir=None):
    """Fresh :class:`MetricModel` by registry name (uncalibrated)."""
    if name in TOYS:
        return TOYS[name]()
    if name in _CUSTOM:
        return _CUSTOM[name]()
    if name in SHIPPED:
        return load_shipped(name, weights_dir)
    raise KeyError(f"unknown metric {name!r}; registered: {', '.join(registered_names())}")


__all__ = [
    "CalibrationError",
    "IncompatibleImage",
    "InputPolicy",
    "MetricFault",
    "MetricModel",
    "NaturalnessEpsilon",
    "ProxyScores",
    "SHIPPED",
    "branch_signature",
    "calibrate_range",
    "get_metric",
    "mse",
    "proxy_scores",
    "psnr_from_mse",
    "register_metric",
    "registered_names",
    "score",
    "score_and_gradient",
    "score_gradient",
    "ssim",
]
