"""One-sided Wilcoxon signed-rank test on paired gains.

The alternative is "a has smaller gains than b" (a is more robust).  With
d = a - b, zero differences dropped and ties given mid-ranks, the statistic
is T+ = sum of the ranks of positive d, and the p-value is the lower tail
P(T+ <= t) under the null of symmetric differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float | None  # T+; None when undefined
    p_value: float | None  # P(T+ <= statistic): evidence that a has smaller gains
    p_opposite: float | None  # P(T+ >= statistic): evidence that a has larger gains
    n: int  # nonzero differences used
    method: str  # "exact", "normal" or "undefined"

    @property
    def defined(self):
        return self.p_value is not None


def signed_ranks(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0.0]
    return d, rankdata(np.abs(d))


def exact_null_distribution(ranks):
    """Probability of every achievable T+ for the given (possibly mid-) ranks.

    Doubling the ranks makes mid-ranks integral; a subset-sum DP then counts
    the 2^n equally likely sign assignments.  Returns (values, probabilities).
    """
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    support = np.nonzero(counts)[0]
    return support / 2.0, counts[support] / 2.0 ** len(doubled)


def wilcoxon_one_sided(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    d, ranks = signed_ranks(a, b)
    n = d.size
    if n == 0:
        return WilcoxonResult(None, None, None, 0, "undefined")
    t_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        values, probs = exact_null_distribution(ranks)
        # compare on the doubled (integer) scale to avoid float equality issues
        at_or_below = np.rint(2 * values) <= round(2 * t_plus)
        at_or_above = np.rint(2 * values) >= round(2 * t_plus)
        lower = float(probs[at_or_below].sum())
        upper = float(probs[at_or_above].sum())
        return WilcoxonResult(t_plus, min(lower, 1.0), min(upper, 1.0), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    sd = math.sqrt(var)
    lower = float(norm.cdf((t_plus - mean + 0.5) / sd))
    upper = float(norm.sf((t_plus - mean - 0.5) / sd))
    return WilcoxonResult(t_plus, lower, upper, n, "normal")
