"""Adversarial robustness benchmark for differentiable no-reference image-quality metrics."""

__version__ = "0.1.0"
