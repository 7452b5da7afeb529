"""Dense float64 arrays with reverse-mode differentiation and an Adam optimizer."""

from iqarobust.gradcore.adam import AdamState, adam_step
from iqarobust.gradcore.graph import (
    Evaluation,
    Graph,
    GraphError,
    NonFiniteError,
    ShapeError,
    forward,
    value_and_grad,
)
from iqarobust.gradcore.gradcheck import GradientCheck, check_gradient, gradient_check
from iqarobust.gradcore.ops import SOBEL_H, SOBEL_V
from iqarobust.gradcore.weights import WeightFileError, load_weights, save_weights

__all__ = [
    "AdamState",
    "Evaluation",
    "Graph",
    "GradientCheck",
    "GraphError",
    "NonFiniteError",
    "SOBEL_H",
    "SOBEL_V",
    "ShapeError",
    "WeightFileError",
    "adam_step",
    "check_gradient",
    "forward",
    "gradient_check",
    "load_weights",
    "save_weights",
    "value_and_grad",
]
