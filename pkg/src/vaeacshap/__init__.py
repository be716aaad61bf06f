"""Dependence-aware Shapley explanations with a VAEAC conditional sampler."""

__version__ = "0.1.0"
