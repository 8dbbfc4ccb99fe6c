"""Covariate-aware adaptation toolkit for frozen time-series backbones."""

__version__ = "0.1.0"
