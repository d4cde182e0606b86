"""
Trajectory quantiles and random-effect correlations
===================================================

Population quantile curves are taken across subjects' posterior-median
trajectories; they are generally not bent lines themselves.  Correlations
between random effects are computed draw by draw across subjects.
"""

# %%
import warnings

import numpy as np

from bablr import (
    SIM2_DESIGN,
    SIM2_TRUTH,
    SamplerConfig,
    fit,
    individual_trajectory,
    population_quantile_curves,
    random_effect_correlations,
    simulate_dataset,
)

warnings.simplefilter("ignore")

# %%
data, truth = simulate_dataset(SIM2_TRUTH, n_subjects=60, seed=4, **SIM2_DESIGN)
store = fit(data, sampler=SamplerConfig(chains=2, warmup=400, samples=300, seed=5))

# %%
grid = np.arange(-6.0, 6.5, 2.0)
curves = population_quantile_curves(store, grid, quantiles=(0.1, 0.5, 0.9))
print("age  " + "  ".join(f"q{q:.1f}" for q in curves.quantiles))
for a, col in zip(grid, curves.values.T):
    print(f"{a:4.0f} " + " ".join(f"{v:6.2f}" for v in col))

# %%
# One subject's band of expected trajectories (residual noise excluded).
sid = data.ids[0]
lo, med, hi = individual_trajectory(store, sid, grid)
print(sid, "median", np.round(med, 2))
print(sid, "95% band width", np.round(hi - lo, 2))

# %%
# The fit uses independent priors, so recovered correlations shrink a little
# toward zero.
post = random_effect_correlations(store)
for (label, mean, sd), (a, b) in zip(post.table(), post.pairs):
    print(f"{label}: {mean:+.2f} ({sd:.2f})   truth {truth.correlation[a - 1, b - 1]:+.2f}")
