"""Attacks on differentiable quality metrics."""

from iqarobust.attacks.catalog import CATALOG, render_markdown
from iqarobust.attacks.gradient import (
    activity_map,
    amifgsm,
    fgsm,
    ifgsm,
    korhonen,
    madc,
    mifgsm,
    orthogonal_component,
    project_to_mse,
    run_attack,
)
from iqarobust.attacks.loss import UncalibratedMetric, attack_loss, attack_loss_and_gradient
from iqarobust.attacks.spec import (
    KINDS,
    PER_IMAGE_KINDS,
    UAP_KINDS,
    AttackError,
    AttackResult,
    AttackSpec,
)
from iqarobust.attacks.uap import (
    Generator,
    Perturbation,
    apply_uap,
    fit_pattern,
    train_uap,
    train_uap_cumulative,
    train_uap_generative,
    train_uap_optimized,
    uap_attack,
)

__all__ = [
    "CATALOG",
    "KINDS",
    "PER_IMAGE_KINDS",
    "UAP_KINDS",
    "AttackError",
    "AttackResult",
    "AttackSpec",
    "Generator",
    "Perturbation",
    "UncalibratedMetric",
    "activity_map",
    "amifgsm",
    "apply_uap",
    "attack_loss",
    "attack_loss_and_gradient",
    "fgsm",
    "fit_pattern",
    "ifgsm",
    "korhonen",
    "madc",
    "mifgsm",
    "orthogonal_component",
    "project_to_mse",
    "render_markdown",
    "run_attack",
    "train_uap",
    "train_uap_cumulative",
    "train_uap_generative",
    "train_uap_optimized",
    "uap_attack",
]
