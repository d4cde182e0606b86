"""
Held-out predictive validation
==============================

Hold out the last visit of half the subjects, refit, and check how often the
held-out value lands inside its 95% predictive interval.  The predictive
distribution is a mixture of normals over posterior draws; its quantiles are
found by bisection on the mixture CDF.
"""

# %%
import warnings

import numpy as np

from bablr import (
    SIM1_TRUTH,
    PredictiveDistribution,
    SamplerConfig,
    fit,
    holdout_validation,
    leave_last_out,
    predictive_cdf,
    predictive_quantile,
    simulate_dataset,
)

warnings.simplefilter("ignore")

# %%
# A single-draw mixture reproduces the normal CDF.
pd = PredictiveDistribution([0.0], 1.0)
print(f"F(1.96) = {predictive_cdf(pd, 1.96):.7f}, q(0.975) = {predictive_quantile(pd, 0.975):.6f}")

# %%
data, _ = simulate_dataset(SIM1_TRUTH, n_subjects=60, seed=21)
train, heldout = leave_last_out(data, 0.5, np.random.default_rng(22))
store = fit(train, sampler=SamplerConfig(chains=2, warmup=400, samples=400, seed=23))

# %%
report = holdout_validation(store, heldout)
print(f"coverage {report.coverage:.2f} ({report.n_inside}/{len(report.points)})")
for p in report.points[:5]:
    print(f"{p.subject_id}: y={p.y:+.2f}  interval [{p.q025:+.2f}, {p.q975:+.2f}]"
          f"  {'inside' if p.inside else 'outside'}")
