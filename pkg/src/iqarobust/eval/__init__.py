"""Robustness measures: scaling, domain transport, gains, distribution scores, tests."""

from iqarobust.eval.aggregate import (
    CellData,
    Estimate,
    ReportRow,
    aggregate,
    bootstrap_ci,
    point_measures,
    seed_for,
)
from iqarobust.eval.measures import (
    RScore,
    energy_distance,
    e_score,
    gains,
    r_score,
    r_score_terms,
    shift_sign,
    w_score,
    wasserstein1,
)
from iqarobust.eval.series import EvaluationError, ScalingParams, ScoreSeries, minmax_scale
from iqarobust.eval.transport import TransportMap, apply_transport, fit_transport
from iqarobust.eval.wilcoxon import (
    WilcoxonResult,
    exact_null_distribution,
    signed_ranks,
    wilcoxon_one_sided,
)

__all__ = [
    "CellData",
    "Estimate",
    "EvaluationError",
    "RScore",
    "ReportRow",
    "ScalingParams",
    "ScoreSeries",
    "TransportMap",
    "WilcoxonResult",
    "aggregate",
    "apply_transport",
    "bootstrap_ci",
    "e_score",
    "energy_distance",
    "exact_null_distribution",
    "fit_transport",
    "gains",
    "minmax_scale",
    "point_measures",
    "r_score",
    "r_score_terms",
    "seed_for",
    "shift_sign",
    "signed_ranks",
    "w_score",
    "wasserstein1",
    "wilcoxon_one_sided",
]
