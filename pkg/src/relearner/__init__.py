"""Residual-correction spatiotemporal forecasting: Gaussian field theory,
closed-form predictors, and a small trainable model with its harness."""

__version__ = "0.1.0"
