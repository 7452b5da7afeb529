"""Exact one-dimensional optimal transport between empirical score distributions.

In one dimension the optimal monotone map is the quantile coupling
F_target^-1 o F_source, so it is computed directly from quantile grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from iqarobust.eval.series import EvaluationError


@dataclass(frozen=True)
class TransportMap:
    source: tuple  # strictly increasing
    target: tuple  # nondecreasing, same length

    def __post_init__(self):
        if len(self.source) != len(self.target) or not self.source:
            raise EvaluationError("transport grids must be nonempty and of equal length")

    def to_dict(self):
        return {"source": list(self.source), "target": list(self.target)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["source"]), tuple(d["target"]))


def fit_transport(source, target, grid_size=101):
    """Map source quantile q to target quantile q on ``grid_size`` evenly spaced levels.

    Equal source quantiles (ties) are merged and their target quantiles
    averaged, which keeps the map a function and monotone.
    """
    source = np.asarray(source, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if source.size == 0 or target.size == 0:
        raise EvaluationError("transport needs nonempty samples")
    if grid_size < 2:
        raise EvaluationError("transport grid_size must be >= 2")
    levels = np.linspace(0.0, 1.0, grid_size)
    src = np.quantile(source, levels)
    tgt = np.quantile(target, levels)
    uniq, inverse = np.unique(src, return_inverse=True)
    merged = np.bincount(inverse, weights=tgt) / np.bincount(inverse)
    # averaging can break ties in the wrong direction by an ulp; restore monotonicity
    merged = np.maximum.accumulate(merged)
    return TransportMap(tuple(uniq.tolist()), tuple(merged.tolist()))


def apply_transport(tmap: TransportMap, values):
    """Piecewise-linear interpolation on the grids; values outside the source range clamp.

    Each segment is evaluated as ``y0 + (y1 - y0) * t`` and clipped to
    ``[y0, y1]``, which keeps the map monotone in floating point
    (``np.interp`` can round a value just left of a knot above the knot).
    """
    values = np.asarray(values, dtype=np.float64)
    src = np.asarray(tmap.source)
    tgt = np.asarray(tmap.target)
    if src.size == 1:
        return np.full(values.shape, tgt[0])
    x = np.clip(values, src[0], src[-1])
    k = np.clip(np.searchsorted(src, x, side="right") - 1, 0, src.size - 2)
    x0, x1, y0, y1 = src[k], src[k + 1], tgt[k], tgt[k + 1]
    t = (x - x0) / (x1 - x0)
    return np.clip(y0 + (y1 - y0) * t, y0, y1)
