"""The range-normalised attack loss J = 1 - score / range."""

from __future__ import annotations

from iqarobust.metrics import MetricModel, score, score_and_gradient


class UncalibratedMetric(ValueError):
    pass


def metric_range(metric: MetricModel) -> float:
    r = metric.range
    if r is None or not r > 0:
        raise UncalibratedMetric(f"{metric.name} has no calibrated score range")
    return r


def attack_loss(metric: MetricModel, image) -> float:
    """J = 1 - score(image) / range; decreasing J increases the score."""
    return 1.0 - score(metric, image) / metric_range(metric)


def attack_loss_and_gradient(metric: MetricModel, image):
    r = metric_range(metric)
    s, g = score_and_gradient(metric, image)
    return 1.0 - s / r, g * (-1.0 / r)
