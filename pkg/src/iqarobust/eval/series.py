"""Paired before/after score series and min-max scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Scaled scores are rounded to multiples of 2**-SCALE_GRID_BITS.  Min-max
# scaling is affine-invariant in exact arithmetic but not in floating point;
# rounding to a grid far coarser than the rounding error makes the scaled
# series, and everything computed from it, bit-identical under a positive
# affine change of the raw scores.
SCALE_GRID_BITS = 26
_GRID = float(2 ** SCALE_GRID_BITS)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreSeries:
    metric: str
    dataset: str
    attack: str
    before: tuple
    after: tuple

    def __post_init__(self):
        before = tuple(float(v) for v in self.before)
        after = tuple(float(v) for v in self.after)
        if len(before) != len(after):
            raise EvaluationError(f"before/after lengths differ: {len(before)} vs {len(after)}")
        if not all(math.isfinite(v) for v in before + after):
            raise EvaluationError("score series contains non-finite values")
        object.__setattr__(self, "before", before)
        object.__setattr__(self, "after", after)

    def __len__(self):
        return len(self.before)

    @property
    def arrays(self):
        return np.array(self.before), np.array(self.after)


@dataclass(frozen=True)
class ScalingParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise EvaluationError(f"scaling needs max > min, got ({self.min}, {self.max})")

    def apply(self, values):
        v = (np.asarray(values, dtype=np.float64) - self.min) / (self.max - self.min)
        return np.round(v * _GRID) / _GRID


def minmax_scale(series: ScoreSeries):
    """Scale before and after by the before-attack min and max; after may leave [0, 1]."""
    before, after = series.arrays
    if len(before) == 0:
        raise EvaluationError("cannot scale an empty series")
    params = ScalingParams(float(before.min()), float(before.max()))
    scaled = ScoreSeries(series.metric, series.dataset, series.attack,
                         tuple(params.apply(before)), tuple(params.apply(after)))
    return scaled, params
