from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from iqarobust.gradcore import Evaluation, Graph, NonFiniteError, ShapeError


class MetricFault(RuntimeError):
    """The metric produced a non-finite score or gradient."""


class IncompatibleImage(ValueError):
    pass


class CalibrationError(ValueError):
    pass


POLICY_KINDS = ("full-frame", "center-crop", "resize")


@dataclass(frozen=True)
class InputPolicy:
    """How a metric sees an image: unchanged, centre-cropped, or resized to ``size``."""

    kind: str = "full-frame"
    size: int | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown input policy {self.kind!r}")
        if self.kind != "full-frame" and (self.size is None or self.size < 1):
            raise ValueError(f"input policy {self.kind!r} needs a positive size")

    def apply(self, g: Graph, x: int, shape) -> int:
        h, w = shape[:2]
        if self.kind == "center-crop":
            ch, cw = min(self.size, h), min(self.size, w)
            if (ch, cw) == (h, w):
                return x
            return g.crop(x, (h - ch) // 2, (w - cw) // 2, ch, cw)
        if self.kind == "resize":
            return g.resize(x, self.size, self.size)
        return x

    def describe(self):
        return self.kind if self.size is None else f"{self.kind}({self.size})"


class MetricModel:
    """A differentiable scalar no-reference metric over H x W x C images in [0, 1].

    ``build(graph, node)`` appends the metric's ops to ``graph`` reading the
    policy-transformed image at ``node`` and returns the scalar output node.
    Graphs are built lazily per input shape and then shared read-only.
    """

    def __init__(self, name, build, policy=None, channels=3, declared_range=None,
                 description=""):
        self.name = name
        self.build = build
        self.policy = policy or InputPolicy()
        self.channels = channels
        self.declared_range = declared_range
        self.description = description
        self._graphs: dict[tuple, Graph] = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"MetricModel({self.name!r}, policy={self.policy.describe()}, range={self.declared_range})"

    def graph_for(self, shape) -> Graph:
        shape = tuple(shape)
        with self._lock:
            graph = self._graphs.get(shape)
            if graph is None:
                graph = Graph()
                x = graph.input("image")
                out = self.build(graph, self.policy.apply(graph, x, shape))
                graph.set_output(graph.sum(out))
                self._graphs[shape] = graph
        return graph

    @property
    def range(self):
        if self.declared_range is None:
            return None
        lo, hi = self.declared_range
        return hi - lo

    def _check(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != self.channels:
            raise IncompatibleImage(
                f"{self.name} expects H x W x {self.channels} images, got {image.shape}"
            )
        return image

    def evaluate(self, image):
        image = self._check(image)
        ev = Evaluation(self.graph_for(image.shape))
        try:
            ev.forward({"image": image})
        except ShapeError as exc:
            raise IncompatibleImage(f"{self.name}: {exc}") from exc
        except NonFiniteError as exc:
            raise MetricFault(f"{self.name}: {exc}") from exc
        return ev


def score(metric: MetricModel, image) -> float:
    return float(metric.evaluate(image).output)


def score_and_gradient(metric: MetricModel, image):
    ev = metric.evaluate(image)
    try:
        grad = ev.backward("image")
    except NonFiniteError as exc:
        raise MetricFault(f"{metric.name}: {exc}") from exc
    return float(ev.output), grad


def score_gradient(metric: MetricModel, image):
    return score_and_gradient(metric, image)[1]


def calibrate_range(metric: MetricModel, images):
    """Set ``metric.declared_range`` to the (min, max) score over ``images``."""
    images = list(images)
    if not images:
        raise CalibrationError(f"{metric.name}: calibration dataset is empty")
    scores = [score(metric, img) for img in images]
    lo, hi = min(scores), max(scores)
    if not hi > lo:
        raise CalibrationError(
            f"{metric.name}: constant score {lo!r} over {len(scores)} calibration image(s)"
        )
    metric.declared_range = (lo, hi)
    return lo, hi


def branch_signature(metric: MetricModel, image) -> str:
    """Identifier of the smooth piece of the metric that ``image`` lies on."""
    return metric.evaluate(image).branch_signature()
