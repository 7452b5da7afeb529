"""Central finite-difference checks for reverse-mode gradients.

Piecewise-linear ops (ReLU, max-pool, clamp) make a function
non-differentiable on measure-zero sets.  A central difference whose
stencil ``x +/- h e`` crosses such a set measures a secant across a kink,
not the derivative, so when a ``branch`` callable is supplied, probes whose
endpoints land on a different piece than ``x`` are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GradientCheck:
    error: float  # worst relative error over the probes that were compared
    checked: int
    skipped: int  # probes whose stencil straddled a branch change


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximised."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_partials(f, x, coords, h=1e-4):
    """Central differences of scalar ``f`` at ``x`` for the flat indices ``coords``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(coords))
    for k, idx in enumerate(coords):
        e = np.zeros(x.size)
        e[idx] = 1.0
        out[k] = numeric_directional(f, x, e.reshape(x.shape), h)
    return out


def numeric_directional(f, x, direction, h=1e-4):
    x = np.asarray(x, dtype=np.float64)
    return (f(x + h * direction) - f(x - h * direction)) / (2.0 * h)


def gradient_check(f, grad, x, rng, n_coords=24, n_dirs=2, h=1e-4, branch=None):
    """Compare ``grad`` (the analytic gradient of ``f`` at ``x``) with central differences.

    Probes ``n_coords`` random coordinate axes and ``n_dirs`` random unit
    directions.  With ``branch`` (a function of the input returning a
    hashable piece identifier) stencils that leave the piece of ``x`` are
    skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    here = branch(x) if branch is not None else None
    probes = []
    for idx in rng.choice(x.size, size=min(n_coords, x.size), replace=False):
        e = np.zeros(x.size)
        e[idx] = 1.0
        probes.append(e.reshape(x.shape))
    for _ in range(n_dirs):
        d = rng.standard_normal(x.shape)
        probes.append(d / np.linalg.norm(d))
    worst, checked, skipped = 0.0, 0, 0
    for d in probes:
        if branch is not None and (branch(x + h * d) != here or branch(x - h * d) != here):
            skipped += 1
            continue
        worst = max(worst, relative_error(np.sum(grad * d), numeric_directional(f, x, d, h)))
        checked += 1
    return GradientCheck(worst, checked, skipped)


def check_gradient(f, grad, x, rng, n_coords=24, n_dirs=2, h=1e-4, branch=None):
    """Worst relative error of :func:`gradient_check`."""
    return gradient_check(f, grad, x, rng, n_coords, n_dirs, h, branch).error
