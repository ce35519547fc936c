"""Outlier-robust learning of Gaussian mixtures at desk scale."""

from .mixture import (GaussianComponent, GaussianMixture, Hypothesis, IsotropizingTransform,
                      log_density, match_components, sample_mixture, tv_monte_carlo,
                      tv_upper_bound)

__all__ = ["GaussianComponent", "GaussianMixture", "Hypothesis", "IsotropizingTransform",
           "log_density", "match_components", "sample_mixture", "tv_monte_carlo",
           "tv_upper_bound"]
__version__ = "0.1.0"
