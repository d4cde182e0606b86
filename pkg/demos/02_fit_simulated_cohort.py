"""
Fitting a simulated cohort
==========================

Simulate a cohort with known truth, fit it with NUTS, check convergence and
compare the posterior with the generating values.
"""

# %%
import warnings

from bablr import (
    POPULATION_PARAMETERS,
    SIM1_TRUTH,
    SamplerConfig,
    diagnose,
    fit,
    simulate_dataset,
    summarize,
)

warnings.simplefilter("ignore")  # a few simulated subjects have under 3 visits

# %%
data, truth = simulate_dataset(SIM1_TRUTH, n_subjects=40, seed=1)
print(data.n_subjects, "subjects,", data.n_obs, "observations")

# %%
# Short chains keep the demo quick; the defaults are 4 x 5000 / 5000.
store = fit(data, sampler=SamplerConfig(chains=2, warmup=400, samples=400, seed=3))
report = diagnose(store, max_treedepth=10)
print(f"max R-hat {report.max_rhat():.3f}, {report.divergences} divergences")

# %%
pop = truth.population()
print(f"{'parameter':10s} {'truth':>8s} {'median':>8s}   95% interval")
for s in summarize(store, POPULATION_PARAMETERS):
    flag = "" if s.covers(pop[s.name]) else "  (missed)"
    print(f"{s.name:10s} {pop[s.name]:8.4f} {s.median:8.4f}   "
          f"[{s.lower:.4f}, {s.upper:.4f}]{flag}")
