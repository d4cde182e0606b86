"""Bayesian bent-line regression with random change points."""

from .analysis import (
    PredictiveDistribution,
    holdout_validation,
    individual_trajectory,
    leave_last_out,
    population_quantile_curves,
    predictive_cdf,
    predictive_distribution,
    predictive_quantile,
    random_effect_correlations,
    summarize,
)
from .diagnostics import diagnose, ess_bulk, split_rhat
from .fitting import fit, prior_sensitivity, scale_prior_variant
from .model import (
    POPULATION_PARAMETERS,
    BentLineModel,
    LongitudinalDataset,
    ModelParameters,
    PriorConfig,
    SubjectRecord,
    bent_line_mean,
    log_posterior_grad,
    parameter_names,
    to_constrained,
    to_unconstrained,
)
from .priors import Prior, parse_prior
from .sampler import DrawsStore, SamplerConfig, run_chains
from .simulate import SIM1_TRUTH, SIM2_DESIGN, SIM2_TRUTH, run_sim_study, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "BentLineModel",
    "DrawsStore",
    "LongitudinalDataset",
    "ModelParameters",
    "POPULATION_PARAMETERS",
    "PredictiveDistribution",
    "Prior",
    "PriorConfig",
    "SIM1_TRUTH",
    "SIM2_DESIGN",
    "SIM2_TRUTH",
    "SamplerConfig",
    "SubjectRecord",
    "bent_line_mean",
    "diagnose",
    "ess_bulk",
    "fit",
    "holdout_validation",
    "individual_trajectory",
    "leave_last_out",
    "log_posterior_grad",
    "parameter_names",
    "parse_prior",
    "population_quantile_curves",
    "predictive_cdf",
    "predictive_distribution",
    "predictive_quantile",
    "prior_sensitivity",
    "random_effect_correlations",
    "run_chains",
    "run_sim_study",
    "scale_prior_variant",
    "simulate_dataset",
    "split_rhat",
    "summarize",
    "to_constrained",
    "to_unconstrained",
]
