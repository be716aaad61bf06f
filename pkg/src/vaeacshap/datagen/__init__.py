"""Synthetic data with known conditional structure."""

from .burr import (
    BurrSpec,
    burr_marginal_cdf,
    burr_signal,
    burr_spec_from_grid,
    burr_truth_conditioner,
    burr_uniforms,
    gen_burr_dataset,
)
from .gaussian import (
    DiscretizedGaussianSpec,
    categorical_conditional_probs,
    equicorrelation,
    gen_discretized_dataset,
    gen_response_mixed,
    grid_linear_model,
    mixed_linear_model,
    mixed_spec,
    mvn_rect_prob,
    normal_linear_model,
    true_v_categorical,
    true_v_mixed,
)

__all__ = [
    "BurrSpec", "DiscretizedGaussianSpec", "burr_marginal_cdf", "burr_signal",
    "burr_spec_from_grid", "burr_truth_conditioner", "burr_uniforms",
    "categorical_conditional_probs", "equicorrelation", "gen_burr_dataset",
    "gen_discretized_dataset", "gen_response_mixed", "grid_linear_model",
    "mixed_linear_model", "mixed_spec", "mvn_rect_prob", "normal_linear_model",
    "true_v_categorical", "true_v_mixed",
]
