"""Distributed detection with Clayton-dependent sensors."""

from ._copdet import (
    ConfigError,
    Scenario,
    bayes_cost,
    clayton_cdf,
    clayton_density,
    gamma_cdf,
    optimal_fusion_rule,
    spearman_rho,
    theta_from_rho,
)

__all__ = [
    "ConfigError",
    "Scenario",
    "bayes_cost",
    "clayton_cdf",
    "clayton_density",
    "gamma_cdf",
    "optimal_fusion_rule",
    "spearman_rho",
    "theta_from_rho",
]
