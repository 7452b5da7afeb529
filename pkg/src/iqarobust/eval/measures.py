"""Robustness measures over min-max-scaled before/after score pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

R_SCORE_MIN_CHANGE = 1e-6


@dataclass(frozen=True)
class RScore:
    value: float | None  # None when every pair was excluded
    used: int
    excluded: int


def _pair(before, after):
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise ValueError(f"before/after shapes differ: {before.shape} vs {after.shape}")
    return before, after


def gains(before, after):
    """(absolute gain, relative gain): mean(after - before), mean((after - before) / (before + 1))."""
    before, after = _pair(before, after)
    delta = after - before
    return float(np.mean(delta)), float(np.mean(delta / (before + 1.0)))


def r_score_terms(before, after, min_change=R_SCORE_MIN_CHANGE):
    """Per-pair log10(max(1 - after, before) / |after - before|) and the mask of pairs used.

    Pairs whose change is below ``min_change`` or whose numerator is not
    positive are outside the measure's domain and are excluded.
    """
    before, after = _pair(before, after)
    delta = np.abs(after - before)
    num = np.maximum(1.0 - after, before)
    used = (delta >= min_change) & (num > 0)
    terms = np.log10(num[used] / delta[used])
    return terms, used


def r_score(before, after, min_change=R_SCORE_MIN_CHANGE):
    terms, used = r_score_terms(before, after, min_change)
    value = float(np.mean(terms)) if terms.size else None
    return RScore(value, int(used.sum()), int((~used).sum()))


def _cdf_steps(p, q):
    """Breakpoints and the CDF difference F_p - F_q on each interval between them."""
    p = np.sort(np.asarray(p, dtype=np.float64))
    q = np.sort(np.asarray(q, dtype=np.float64))
    xs = np.unique(np.concatenate([p, q]))
    fp = np.searchsorted(p, xs[:-1], side="right") / p.size
    fq = np.searchsorted(q, xs[:-1], side="right") / q.size
    return np.diff(xs), fp - fq


def wasserstein1(p, q):
    """W1 between two empirical distributions.

    Equal sizes use the sorted pairing mean |p_(i) - q_(i)|; otherwise the
    integral of |F_p - F_q|.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("W1 needs nonempty samples")
    if p.size == q.size:
        return float(np.mean(np.abs(np.sort(p) - np.sort(q))))
    widths, diff = _cdf_steps(p, q)
    return float(np.sum(widths * np.abs(diff)))


def energy_distance(p, q):
    """sqrt(2 * integral of (F_p - F_q)^2) for empirical CDFs."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("energy distance needs nonempty samples")
    widths, diff = _cdf_steps(p, q)
    return math.sqrt(2.0 * float(np.sum(widths * diff * diff)))


def shift_sign(before, after):
    """-1 if the mean score went down, +1 otherwise (including no change)."""
    return -1.0 if np.mean(after) < np.mean(before) else 1.0


def w_score(before, after):
    before, after = np.asarray(before, float).ravel(), np.asarray(after, float).ravel()
    return shift_sign(before, after) * wasserstein1(before, after)


def e_score(before, after):
    before, after = np.asarray(before, float).ravel(), np.asarray(after, float).ravel()
    return shift_sign(before, after) * energy_distance(before, after)
