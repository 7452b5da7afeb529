"""Per-image gradient attacks: the FGSM family, the activity-masked attack and MADC.

All attacks descend the range-normalised loss J (see :mod:`.loss`), so they
push the metric's score up, and every intermediate image is clipped to [0, 1].
"""

from __future__ import annotations

import math

import numpy as np

from iqarobust.attacks.loss import attack_loss_and_gradient, metric_range
from iqarobust.attacks.spec import AttackError, AttackResult, AttackSpec
from iqarobust.gradcore import Graph, forward
from iqarobust.metrics import proxy_scores, score, score_and_gradient
from iqarobust.metrics.proxy import to_luma

MSE_UNIT_SCALE = {"unit": 1.0, "8bit": 255.0 ** 2}
ACTIVITY_FLOOR = 1e-12


def _result(metric, original, attacked, spec, image_id, steps, flags=(), extra=None,
            before=None):
    flags = list(flags)
    if np.array_equal(attacked, original) and "no-op" not in flags:
        flags.append("no-op")
    return AttackResult(
        image_id=image_id,
        score_before=score(metric, original) if before is None else before,
        score_after=score(metric, attacked),
        proxy=proxy_scores(original, attacked),
        steps_used=steps,
        spec_digest=spec.digest(),
        flags=flags,
        extra=extra or {},
        attacked=attacked,
    )


def fgsm(metric, image, spec: AttackSpec, image_id="image"):
    """One signed step: clip(I - eps * sign(grad J), 0, 1)."""
    original = np.asarray(image, dtype=np.float64)
    _, grad = attack_loss_and_gradient(metric, original)
    attacked = np.clip(original - spec.epsilon * np.sign(grad), 0.0, 1.0)
    flags = ["no-op"] if not grad.any() else []
    return _result(metric, original, attacked, spec, image_id, 1, flags)


def _signed_iterations(metric, original, spec, epsilon, momentum):
    """I-FGSM / MI-FGSM loop; returns (attacked, all_gradients_zero)."""
    lo, hi = original - epsilon, original + epsilon
    x = original.copy()
    g_acc = np.zeros_like(original)
    all_zero = True
    for _ in range(spec.iterations):
        _, grad = attack_loss_and_gradient(metric, x)
        all_zero = all_zero and not grad.any()
        g_acc = grad + momentum * g_acc
        x = np.clip(np.clip(x - spec.alpha * np.sign(g_acc), lo, hi), 0.0, 1.0)
    return x, all_zero


def ifgsm(metric, image, spec: AttackSpec, image_id="image"):
    """T steps of size alpha along -sign(grad J), each projected to the eps-ball and [0, 1]."""
    original = np.asarray(image, dtype=np.float64)
    x, all_zero = _signed_iterations(metric, original, spec, spec.epsilon, 0.0)
    return _result(metric, original, x, spec, image_id, spec.iterations,
                   ["no-op"] if all_zero else [])


def mifgsm(metric, image, spec: AttackSpec, image_id="image"):
    """I-FGSM driven by the accumulated gradient g_t = grad J + momentum * g_{t-1}."""
    original = np.asarray(image, dtype=np.float64)
    x, all_zero = _signed_iterations(metric, original, spec, spec.epsilon, spec.momentum)
    return _result(metric, original, x, spec, image_id, spec.iterations,
                   ["no-op"] if all_zero else [])


def amifgsm(metric, image, spec: AttackSpec, eps_provider, image_id="image"):
    """MI-FGSM with epsilon = 1 / eps_provider(image).

    ``eps_provider`` maps the unattacked image to a strictly positive
    quality value where lower means better (NIQE-like).
    """
    original = np.asarray(image, dtype=np.float64)
    value = float(eps_provider(original))
    if not (math.isfinite(value) and value > 0):
        raise AttackError(f"epsilon provider returned {value!r}; need a finite value > 0")
    epsilon = 1.0 / value
    if epsilon > 1.0:
        raise AttackError(f"epsilon provider returned {value!r}; 1/value exceeds 1")
    x, all_zero = _signed_iterations(metric, original, spec, epsilon, spec.momentum)
    return _result(metric, original, x, spec, image_id, spec.iterations,
                   ["no-op"] if all_zero else [], extra={"epsilon": epsilon})


def activity_map(image):
    """Sobel gradient magnitude of the luma, scaled to [0, 1] by its maximum.

    Returned with a channel axis of 1 so it broadcasts over colour channels.
    Magnitudes below ``ACTIVITY_FLOOR`` are filter rounding residue (a flat
    region filtered in floating point) and are set to zero before scaling.
    """
    g = Graph()
    y = g.const(to_luma(image)[..., None])
    g.set_output(g.sqrt(g.add(g.square(g.sobel_h(y)), g.square(g.sobel_v(y))), floor=0.0))
    s, _ = forward(g, {})
    s = np.where(s < ACTIVITY_FLOOR, 0.0, s)
    peak = s.max()
    return s / peak if peak > 0 else s


def korhonen(metric, image, spec: AttackSpec, image_id="image"):
    """Gradient descent on J with the gradient masked by the original's activity map.

    Each step is I <- clip(I - alpha * (g * S), 0, 1).  ``extra.grad_norm``
    selects how g is normalised: "linf" (default) divides grad J by its
    max-abs value so a step moves pixels by at most alpha; "none" uses the
    raw gradient.
    """
    original = np.asarray(image, dtype=np.float64)
    norm = spec.extra.get("grad_norm", "linf")
    if norm not in ("linf", "none"):
        raise ValueError(f"korhonen extra.grad_norm must be 'linf' or 'none', got {norm!r}")
    mask = activity_map(original)
    x = original.copy()
    if mask.any():
        for _ in range(spec.iterations):
            _, grad = attack_loss_and_gradient(metric, x)
            if norm == "linf":
                peak = np.abs(grad).max()
                if peak == 0:
                    break
                grad = grad / peak
            x = np.clip(x - spec.alpha * (grad * mask), 0.0, 1.0)
    extra = {"linf": float(np.abs(x - original).max())}
    return _result(metric, original, x, spec, image_id, spec.iterations, extra=extra)


def project_to_mse(original, direction, target, tol, max_halvings=200):
    """Scale ``direction`` radially so MSE(clip(original + s * direction), original) hits ``target``.

    MSE along the ray is non-decreasing in s, so bisection applies.  Returns
    (image, mse, converged).  ``target`` and ``tol`` are in unit MSE.
    """
    def at(s):
        x = np.clip(original + s * direction, 0.0, 1.0)
        d = x - original
        return x, float(np.mean(d * d))

    if not direction.any():
        return original.copy(), 0.0, abs(target) <= tol
    lo, hi = 0.0, 1.0
    x, m = at(hi)
    while m < target:
        lo, hi = hi, 2.0 * hi
        x, m = at(hi)
        if hi > 1e12:
            return x, m, abs(m - target) <= tol
    for _ in range(max_halvings):
        if abs(m - target) <= tol:
            return x, m, True
        mid = 0.5 * (lo + hi)
        x, m = at(mid)
        if m < target:
            lo = mid
        else:
            hi = mid
    return x, m, abs(m - target) <= tol


def orthogonal_component(g1, g2):
    """g1 - (g2.g1 / g2.g2) g2, or g1 unchanged when g2 is zero."""
    g2g2 = float(np.sum(g2 * g2))
    if g2g2 == 0.0:
        return g1
    return g1 - (float(np.sum(g2 * g1)) / g2g2) * g2


def madc(metric, image, spec: AttackSpec, image_id="image"):
    """Raise the score while holding MSE to the original at a fixed budget.

    Each iteration steps along the component of the score gradient that is
    orthogonal to the MSE gradient, then rescales the displacement radially
    (binary search) so the MSE sits within ``extra.mse_tol`` (default 0.04)
    of ``extra.mse_target``.  Both are in ``extra.mse_units``: "unit" for
    [0, 1] pixels (default) or "8bit" for 0..255 pixels.
    """
    original = np.asarray(image, dtype=np.float64)
    units = spec.extra.get("mse_units", "unit")
    if units not in MSE_UNIT_SCALE:
        raise ValueError(f"madc extra.mse_units must be one of {sorted(MSE_UNIT_SCALE)}")
    scale = MSE_UNIT_SCALE[units]
    target = float(spec.extra["mse_target"]) / scale
    tol = float(spec.extra.get("mse_tol", 0.04)) / scale
    if not target > 0:
        raise ValueError("madc extra.mse_target must be positive")
    r = metric_range(metric)
    n = original.size
    x = original.copy()
    flags = []
    skipped = 0
    converged = False
    m = 0.0
    for t in range(spec.iterations):
        _, grad_s = score_and_gradient(metric, x)
        g1 = grad_s / r
        g2 = 2.0 * (x - original) / n
        pg = g1 if t == 0 else orthogonal_component(g1, g2)
        peak = np.abs(pg).max()
        g1_peak = np.abs(g1).max()
        if peak == 0.0 or peak <= 1e-12 * g1_peak:
            skipped += 1
            continue
        stepped = x + spec.alpha * pg / peak
        x, m, converged = project_to_mse(original, stepped - original, target, tol)
    if skipped:
        flags.append("projection-vanished")
    if not converged:
        flags.append("non-converged")
    extra = {"mse": m * scale, "mse_target": target * scale, "skipped_steps": skipped}
    return _result(metric, original, x, spec, image_id, spec.iterations, flags, extra)


PER_IMAGE = {
    "fgsm": fgsm,
    "ifgsm": ifgsm,
    "mifgsm": mifgsm,
    "korhonen": korhonen,
    "madc": madc,
}


def run_attack(metric, image, spec: AttackSpec, image_id="image", eps_provider=None):
    """Dispatch a per-image attack by ``spec.kind``."""
    if spec.kind == "amifgsm":
        if eps_provider is None:
            raise AttackError("amifgsm needs an epsilon provider")
        return amifgsm(metric, image, spec, eps_provider, image_id)
    if spec.kind not in PER_IMAGE:
        raise AttackError(f"{spec.kind} is not a per-image attack")
    return PER_IMAGE[spec.kind](metric, image, spec, image_id)
