"""Human-readable catalog of the attack kinds; docs/ATTACKS.md is generated from it."""

from __future__ import annotations

from iqarobust.attacks.spec import KINDS

CATALOG = {
    "fgsm": {
        "family": "per-image",
        "update": "I' = clip(I - eps * sign(grad J), 0, 1)",
        "parameters": ["epsilon"],
        "notes": "Single signed step. Flagged no-op when the gradient is zero everywhere.",
    },
    "ifgsm": {
        "family": "per-image",
        "update": "I_{t+1} = clip(clip(I_t - alpha * sign(grad J), I - eps, I + eps), 0, 1)",
        "parameters": ["epsilon", "alpha", "iterations"],
        "notes": "With iterations=1 and alpha=epsilon it is bitwise identical to fgsm.",
    },
    "mifgsm": {
        "family": "per-image",
        "update": "g_t = grad J + momentum * g_{t-1}; step as ifgsm along -sign(g_t)",
        "parameters": ["epsilon", "alpha", "iterations", "momentum"],
        "notes": "No L1 normalisation of the gradient; momentum=0 reproduces ifgsm bitwise.",
    },
    "amifgsm": {
        "family": "per-image",
        "update": "mifgsm with eps = 1 / provider(I)",
        "parameters": ["alpha", "iterations", "momentum"],
        "notes": ("The provider is pluggable; the default is offset + gain * distance from the "
                  "naturalness-lite prior (offset 16, gain 4). The epsilon used is recorded in "
                  "each result."),
    },
    "uap-cumulative": {
        "family": "universal",
        "update": "p = unit_linf(mean_i(-alpha * sign(grad J(I_i))))",
        "parameters": ["alpha", "amplitude"],
        "notes": "Flagged degenerate when the per-image signs cancel to a zero pattern.",
    },
    "uap-optimized": {
        "family": "universal",
        "update": "Adam on p maximising mean score(clip(I + a * p)); p clamped to [-1, 1]",
        "parameters": ["amplitude", "seed", "extra.epochs", "extra.batch_size", "extra.lr"],
        "notes": "Defaults: 5 epochs, batch 4, lr 1e-3. Loss history is stored with the pattern.",
    },
    "uap-generative": {
        "family": "universal",
        "update": "U-Net G: noise -> pattern, trained with Adam on -mean score(clip(I + a * G(z)))",
        "parameters": ["amplitude", "seed", "extra.epochs", "extra.batch_size", "extra.lr",
                       "extra.width", "extra.depth", "extra.noise_channels"],
        "notes": ("Zero-initialised output layer, clamp to [-1, 1]. After training one pattern "
                  "is generated from seeded uniform noise and frozen."),
    },
    "korhonen": {
        "family": "per-image",
        "update": "I <- clip(I - alpha * (g * S), 0, 1), S = normalised Sobel magnitude of I_0",
        "parameters": ["alpha", "iterations", "extra.grad_norm"],
        "notes": ("The activity map S is computed once from the original luma. g is grad J "
                  "scaled to max-abs 1 (grad_norm=linf, default) or raw (none)."),
    },
    "madc": {
        "family": "per-image",
        "update": ("pg = g1 - (g2.g1 / g2.g2) g2; x <- x + alpha * pg / max|pg|; "
                   "binary search radially to MSE = target"),
        "parameters": ["alpha", "iterations", "extra.mse_target", "extra.mse_units",
                       "extra.mse_tol"],
        "notes": ("g1 = grad score / range, g2 = grad MSE(x, I_0). The first step uses g1 "
                  "(g2 is zero at I_0). Tolerance defaults to 0.04 in the configured units "
                  "(unit or 8bit). Flags: projection-vanished, non-converged."),
    },
}

assert set(CATALOG) == set(KINDS)


def render_markdown():
    lines = [
        "# Attack catalog",
        "",
        "Generated by `iqarobust catalog --output docs/ATTACKS.md`; do not edit by hand.",
        "",
        "All attacks minimise J = 1 - score / range, where range is the metric's calibrated",
        "score range, so they push the score up. Every attacked image is clipped to [0, 1].",
        "",
    ]
    for kind, entry in CATALOG.items():
        lines += [
            f"## {kind}",
            "",
            f"- family: {entry['family']}",
            f"- update: `{entry['update']}`",
            f"- parameters: {', '.join(f'`{p}`' for p in entry['parameters'])}",
            f"- notes: {entry['notes']}",
            "",
        ]
    return "\n".join(lines)
