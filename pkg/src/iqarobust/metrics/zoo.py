"""Shipped desk-scale metrics and their layer manifests.

Each network has a ``*_LAYERS`` list (name, kind, shape, initializer) used
both to generate weight files and to document them, and a ``build_*``
factory turning loaded weights into a graph builder.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from iqarobust.gradcore import load_weights
from iqarobust.metrics.base import InputPolicy, MetricModel, score

WEIGHTS_DIR = Path(__file__).parent / "weights"

LUMA_BT601 = np.array([0.299, 0.587, 0.114])

TINY_CNN_LAYERS = [
    {"name": "c1.w", "kind": "conv2d.weight", "shape": [3, 3, 3, 8], "initializer": "he_normal"},
    {"name": "c1.b", "kind": "conv2d.bias", "shape": [8], "initializer": "zeros"},
    {"name": "c2.w", "kind": "conv2d.weight", "shape": [3, 3, 8, 12], "initializer": "he_normal"},
    {"name": "c2.b", "kind": "conv2d.bias", "shape": [12], "initializer": "zeros"},
    {"name": "c3.w", "kind": "conv2d.weight", "shape": [3, 3, 12, 16], "initializer": "he_normal"},
    {"name": "c3.b", "kind": "conv2d.bias", "shape": [16], "initializer": "zeros"},
    {"name": "head.w", "kind": "affine.weight", "shape": [16, 1], "initializer": "ridge_fit"},
    {"name": "head.b", "kind": "affine.bias", "shape": [1], "initializer": "ridge_fit"},
]

PATCH_LAYERS = [
    {"name": "embed.w", "kind": "conv2d.weight", "shape": [4, 4, 3, 8], "initializer": "he_normal"},
    {"name": "embed.b", "kind": "conv2d.bias", "shape": [8], "initializer": "zeros"},
    {"name": "mix.w", "kind": "conv2d.weight", "shape": [1, 1, 8, 8], "initializer": "he_normal"},
    {"name": "mix.b", "kind": "conv2d.bias", "shape": [8], "initializer": "zeros"},
    {"name": "quality.w", "kind": "conv2d.weight", "shape": [1, 1, 8, 1], "initializer": "ridge_fit"},
    {"name": "quality.b", "kind": "conv2d.bias", "shape": [1], "initializer": "ridge_fit"},
    {"name": "weight.w", "kind": "conv2d.weight", "shape": [1, 1, 8, 1], "initializer": "normal(0.5)"},
    {"name": "weight.b", "kind": "conv2d.bias", "shape": [1], "initializer": "zeros"},
]

NATURALNESS_LAYERS = [
    {"name": "prior.mean", "kind": "feature.mean", "shape": [3], "initializer": "calibration_fit"},
    {"name": "prior.scale", "kind": "feature.scale", "shape": [3], "initializer": "calibration_fit"},
]

NATURALNESS_FEATURES = ("mscn_energy", "local_contrast", "edge_strength")


def build_tiny_cnn(w):
    """Three conv+ReLU+pool blocks, global average pool, affine head."""

    def build(g, x):
        return g.affine(tiny_cnn_features(g, x, w), g.const(w["head.w"]), g.const(w["head.b"]))

    return build


def tiny_cnn_features(g, x, w):
    """Pooled 16-d feature node of the tiny CNN (used to fit its head)."""
    h = x
    for name, pool in (("c1", "avg"), ("c2", "max"), ("c3", "avg")):
        h = g.relu(g.conv2d(h, g.const(w[f"{name}.w"]), g.const(w[f"{name}.b"]), padding=1))
        h = g.avgpool(h, 2) if pool == "avg" else g.maxpool(h, 2)
    return g.global_avg_pool(h)


def patch_branches(g, x, w):
    """Per-patch hidden features and positive spatial weights."""
    h = g.relu(g.conv2d(x, g.const(w["embed.w"]), g.const(w["embed.b"]), stride=4, padding=0))
    h = g.relu(g.conv2d(h, g.const(w["mix.w"]), g.const(w["mix.b"])))
    weights = g.sigmoid(g.conv2d(h, g.const(w["weight.w"]), g.const(w["weight.b"])))
    return h, weights


def build_patch_weighted(w):
    """Non-overlapping 4x4 patch scores pooled with learned spatial weights."""

    def build(g, x):
        h, weights = patch_branches(g, x, w)
        q = g.conv2d(h, g.const(w["quality.w"]), g.const(w["quality.b"]))
        return g.div(g.sum(g.mul(q, weights)), g.sum(weights))

    return build


def luma(g, x):
    return g.conv2d(x, g.const(LUMA_BT601.reshape(1, 1, 3, 1)))


def naturalness_features(g, x, softening=0.02):
    """Mean MSCN energy, mean local contrast and mean Sobel edge strength of luma.

    Magnitudes are softened as sqrt(v + c^2) so the features stay smooth with
    bounded curvature on flat regions, where sqrt(v) would have a cusp.
    """
    c2 = softening * softening
    y = luma(g, x)
    box = g.const(np.full((3, 3, 1, 1), 1.0 / 9.0))
    mu = g.conv2d(y, box, padding=1)
    var = g.sub(g.conv2d(g.square(y), box, padding=1), g.square(mu))
    sigma = g.sqrt(g.shift(var, c2))
    mscn = g.div(g.sub(y, mu), sigma)
    edges = g.sqrt(g.shift(g.add(g.square(g.sobel_h(y)), g.square(g.sobel_v(y))), c2))
    return [g.mean(g.square(mscn)), g.mean(sigma), g.mean(edges)]


def build_naturalness(w):
    """Negated distance of luma statistics from a fitted natural-image prior."""
    mean, scale = w["prior.mean"], w["prior.scale"]

    def build(g, x):
        total = None
        for k, f in enumerate(naturalness_features(g, x)):
            z = g.square(g.scale(g.shift(f, -mean[k]), 1.0 / scale[k]))
            total = z if total is None else g.add(total, z)
        return g.scale(g.sqrt(total), -1.0)

    return build


def load_shipped(name, weights_dir=None):
    weights_dir = Path(weights_dir or WEIGHTS_DIR)
    factories = {
        "tiny-cnn-nr": (build_tiny_cnn, InputPolicy(),
                        "3 conv/ReLU/pool blocks, global average pool, affine head"),
        "patch-weighted": (build_patch_weighted, InputPolicy("center-crop", 24),
                           "4x4 patch scores with learned spatial weighting"),
        "naturalness-lite": (build_naturalness, InputPolicy(),
                             "distance of MSCN/contrast/edge statistics from a natural prior"),
    }
    factory, policy, description = factories[name]
    arrays, _ = load_weights(weights_dir / f"{name}.json")
    return MetricModel(name, factory(arrays), policy=policy, description=description)


def mean_pixel():
    """Toy metric: mean of all pixel values."""
    return MetricModel("toy-mean", lambda g, x: g.mean(x), description="mean pixel value")


def saturated_clamp():
    """Toy metric whose clamp is saturated for every image in [0, 1]: constant, zero gradient."""
    return MetricModel("toy-saturated", lambda g, x: g.mean(g.clamp(x, 2.0, 3.0)),
                       description="clamp saturated on [0,1]")


class NaturalnessEpsilon:
    """Quality-to-epsilon provider: ``offset + gain * distance`` from the naturalness prior.

    Lower means more natural, like NIQE, so AMI-FGSM's epsilon = 1 / value
    is larger for cleaner images.
    """

    def __init__(self, metric=None, offset=16.0, gain=4.0):
        self.metric = metric or load_shipped("naturalness-lite")
        self.offset = offset
        self.gain = gain

    def __call__(self, image):
        return self.offset + self.gain * (-score(self.metric, image))
