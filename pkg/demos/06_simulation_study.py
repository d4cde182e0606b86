"""
A small bias and coverage study
===============================

Repeat simulate-then-fit and report, per population parameter, the mean of
the posterior means, their spread across replicates, the bias and the
fraction of 95% intervals covering the truth.  Realistic studies use 100
replicates and longer chains; this one is sized to finish quickly.
"""

# %%
import warnings

from bablr import SIM1_TRUTH, SamplerConfig, run_sim_study

warnings.simplefilter("ignore")

# %%
report = run_sim_study(
    replicates=3, truth=SIM1_TRUTH,
    sampler_config=SamplerConfig(chains=1, warmup=300, samples=200),
    n_subjects=30, seed=6)

# %%
print(f"{'parameter':10s} {'truth':>8s} {'mean':>8s} {'sd':>8s} {'bias':>8s} coverage")
for r in report.rows:
    print(f"{r.parameter:10s} {r.truth:8.4f} {r.mean:8.4f} {r.se:8.4f} {r.bias:8.4f} "
          f"{r.coverage:.2f}")
print("failed replicates:", report.n_failed)
