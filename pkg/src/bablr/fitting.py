"""High-level fitting entry points and the scale-prior sensitivity runs."""

from __future__ import annotations

from .analysis import compare_fits
from .model import SCALE_PARAMETERS, BentLineModel, PriorConfig
from .priors import Prior
from .sampler import SamplerConfig, run_chains

__all__ = ["fit", "scale_prior_variant", "SENSITIVITY_FAMILIES", "prior_sensitivity"]

SENSITIVITY_FAMILIES = ("lognormal", "half_cauchy", "half_normal", "half_student_t")


def fit(data, prior: PriorConfig | None = None, sampler: SamplerConfig | None = None,
        n_jobs=None):
    """Fit the bent-line model to ``data``; returns a DrawsStore."""
    model = BentLineModel(data, PriorConfig() if prior is None else prior)
    return run_chains(model, SamplerConfig() if sampler is None else sampler, n_jobs=n_jobs)


def scale_prior_variant(prior: PriorConfig, family: str, df=3.0, sigma_u2_lognormal=(0.0, 0.2)):
    """Prior config with every scale prior switched to ``family``.

    ``"lognormal"`` reproduces the main application model: half-Cauchy on all
    scales except ``sigma_u2 ~ lognormal(0, 0.2)``.  The other families keep
    each parameter's location and scale.
    """
    changes = {}
    for name in SCALE_PARAMETERS:
        old = getattr(prior, name)
        if family == "lognormal":
            if name == "sigma_u2":
                changes[name] = Prior("lognormal", *sigma_u2_lognormal)
            else:
                changes[name] = Prior("half_cauchy", old.loc if old.family != "lognormal" else 0.0,
                                      old.scale if old.family != "lognormal" else 1.0)
            continue
        loc, scale = (0.0, 1.0) if old.family == "lognormal" else (old.loc, old.scale)
        if family == "half_student_t":
            changes[name] = Prior(family, loc, scale, df=df)
        else:
            changes[name] = Prior(family, loc, scale)
    return prior.replace(**changes)


def prior_sensitivity(data, prior: PriorConfig, sampler: SamplerConfig,
                      families=SENSITIVITY_FAMILIES, n_jobs=None):
    """Fit once per scale-prior family; returns ``(stores, comparison table)``.

    The table maps each population parameter to ``{family: ParameterSummary}``.
    """
    stores = {fam: fit(data, scale_prior_variant(prior, fam), sampler, n_jobs=n_jobs)
              for fam in families}
    return stores, compare_fits(stores)
