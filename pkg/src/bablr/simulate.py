"""Synthetic cohorts from the bent-line model and a bias/coverage harness."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import (
    POPULATION_PARAMETERS,
    FixedEffects,
    LongitudinalDataset,
    PriorConfig,
    ScaleParameters,
    SubjectEffects,
    SubjectRecord,
    bent_line_mean,
)

__all__ = [
    "TruthRecord",
    "SIM1_TRUTH",
    "SIM2_CORRELATION",
    "SIM2_TRUTH",
    "SIM2_DESIGN",
    "DEFAULT_TIME_RANGE",
    "draw_random_effects",
    "simulate_dataset",
    "StudyRow",
    "ReplicateResult",
    "StudyReport",
    "run_sim_study",
]

log = logging.getLogger(__name__)

# time is age minus 65, so [-25, 20] spans ages 40 to 85 and omega_0 = 10 is age 75
DEFAULT_TIME_RANGE = (-25.0, 20.0)

SIM2_CORRELATION = np.array([
    [1.000, 0.807, 0.160, -0.553],
    [0.807, 1.000, 0.077, -0.423],
    [0.160, 0.077, 1.000, -0.404],
    [-0.553, -0.423, -0.404, 1.000],
])


@dataclass
class TruthRecord:
    """Generating values; ``effects`` holds the realised per-subject deviations."""

    fixed: FixedEffects
    scales: ScaleParameters
    correlation: np.ndarray | None = None
    effects: SubjectEffects | None = None
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.correlation is not None:
            r = np.asarray(self.correlation, dtype=float)
            if r.shape != (4, 4) or not np.allclose(r, r.T) or not np.allclose(np.diag(r), 1):
                raise ValueError("correlation must be a symmetric 4x4 matrix with unit diagonal")
            if np.linalg.eigvalsh(r).min() < -1e-10:
                raise ValueError("correlation matrix is not positive semi-definite")
            self.correlation = r

    def population(self):
        """``{name: value}`` for the nine population parameters."""
        f, s = self.fixed, self.scales
        vals = (f.beta10, f.beta20, f.beta30, f.omega0,
                s.sigma_y, s.sigma_u1, s.sigma_u2, s.sigma_u3, s.sigma_u4)
        return dict(zip(POPULATION_PARAMETERS, vals))

    def with_effects(self, effects, ids):
        return TruthRecord(self.fixed, self.scales, self.correlation, effects, list(ids))


SIM1_TRUTH = TruthRecord(
    FixedEffects(beta10=-0.0059, beta20=-0.0052, beta30=-0.0085, omega0=10.0),
    ScaleParameters(sigma_y=0.30, sigma_u1=0.64, sigma_u2=0.02, sigma_u3=0.15, sigma_u4=10.0),
)

# correlations as in the second simulation.  Scales and the time window are
# chosen so that every subject effect is identifiable from 3-7 biennial
# visits: change points sit inside the visit window, the slope change is large
# against the noise, and the beta3 <= 0 truncation removes almost no mass.
SIM2_TRUTH = TruthRecord(
    FixedEffects(beta10=0.0, beta20=0.0, beta30=-1.0, omega0=0.0),
    ScaleParameters(sigma_y=0.1, sigma_u1=1.0, sigma_u2=0.3, sigma_u3=0.3, sigma_u4=1.5),
    correlation=SIM2_CORRELATION,
)
SIM2_DESIGN = {"time_range": (-6.0, 6.0)}


def draw_random_effects(truth: TruthRecord, n, rng, correlation=None, truncate=True):
    """Random effects ``(n, 4)`` with marginal SDs ``sigma_u1..sigma_u4``.

    With ``truncate`` the slope decrement ``beta30 + u3`` is drawn from its
    normal truncated to ``(-inf, 0]``; under a correlation matrix the other
    three effects are then drawn from their conditional normal given ``u3``,
    which samples the truncated multivariate normal exactly.
    """
    sd = truth.scales.sigma_u
    b30 = truth.fixed.beta30
    corr = truth.correlation if correlation is None else np.asarray(correlation, float)
    if corr is None:
        u = rng.standard_normal((n, 4)) * sd
        if truncate:
            u[:, 2] = _truncated_decrement(b30, sd[2], n, rng) - b30
        return u
    cov = corr * np.outer(sd, sd)
    if not truncate:
        return rng.multivariate_normal(np.zeros(4), cov, size=n, method="eigh")
    u3 = _truncated_decrement(b30, sd[2], n, rng) - b30
    other = [0, 1, 3]
    c_o3 = cov[other, 2]
    cond_cov = cov[np.ix_(other, other)] - np.outer(c_o3, c_o3) / cov[2, 2]
    cond_mean = np.outer(u3, c_o3 / cov[2, 2])
    noise = rng.multivariate_normal(np.zeros(3), cond_cov, size=n, method="eigh")
    u = np.empty((n, 4))
    u[:, other] = cond_mean + noise
    u[:, 2] = u3
    return u


def _truncated_decrement(b30, s3, n, rng):
    upper = (0.0 - b30) / s3
    return stats.truncnorm.rvs(-np.inf, upper, loc=b30, scale=s3, size=n, random_state=rng)


def simulate_dataset(truth: TruthRecord, n_subjects, visit_range=(3, 7),
                     time_range=DEFAULT_TIME_RANGE, spacing=2.0, seed=None,
                     correlation=None):
    """Simulate a cohort; returns ``(LongitudinalDataset, TruthRecord)``.

    Each subject gets ``n_i ~ U{visit_range}`` visits ``spacing`` years apart,
    starting uniformly at random wherever all visits fit inside
    ``time_range``.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    lo_v, hi_v = int(visit_range[0]), int(visit_range[1])
    if lo_v < 1 or hi_v < lo_v:
        raise ValueError("visit_range must satisfy 1 <= min <= max")
    t_min, t_max = map(float, time_range)
    if not t_max > t_min or spacing <= 0:
        raise ValueError("invalid time range or spacing")
    if (hi_v - 1) * spacing > t_max - t_min:
        raise ValueError(f"{hi_v} visits {spacing} apart do not fit in [{t_min}, {t_max}]")

    rng = np.random.default_rng(seed)
    n_visits = rng.integers(lo_v, hi_v + 1, size=n_subjects)
    starts = rng.uniform(t_min, t_max - (n_visits - 1) * spacing)
    u = draw_random_effects(truth, n_subjects, rng, correlation=correlation)
    f, sigma_y = truth.fixed, truth.scales.sigma_y
    b1, b2 = f.beta10 + u[:, 0], f.beta20 + u[:, 1]
    b3, om = f.beta30 + u[:, 2], f.omega0 + u[:, 3]

    width = len(str(n_subjects))
    ids = [f"S{k + 1:0{width}d}" for k in range(n_subjects)]
    subjects = []
    for k in range(n_subjects):
        t = starts[k] + spacing * np.arange(n_visits[k])
        mean = bent_line_mean(b1[k], b2[k], b3[k], om[k], t)
        noise = rng.standard_normal(t.size) * sigma_y
        subjects.append(SubjectRecord(ids[k], t, mean + noise))
    data = LongitudinalDataset(subjects)
    effects = SubjectEffects(*u.T)
    record = TruthRecord(truth.fixed, truth.scales,
                         truth.correlation if correlation is None else correlation,
                         effects, ids)
    return data, record


# ---------------------------------------------------------------------------
# replicate study
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    index: int
    ok: bool
    means: dict = field(default_factory=dict)
    covered: dict = field(default_factory=dict)
    max_rhat: float = math.nan
    divergences: int = 0
    error: str = ""


@dataclass
class StudyRow:
    parameter: str
    truth: float
    mean: float
    se: float
    bias: float
    coverage: float
    n: int


@dataclass
class StudyReport:
    """Mean of posterior means, their SD across replicates, bias and 95% coverage."""

    rows: list
    replicates: list

    @property
    def n_failed(self):
        return sum(not r.ok for r in self.replicates)

    def row(self, name):
        for r in self.rows:
            if r.parameter == name:
                return r
        raise KeyError(name)


def _replicate_seeds(seed, index):
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    data_seed, fit_seed = ss.generate_state(2, dtype=np.uint32)
    return int(data_seed), int(fit_seed)


def _run_replicate(args):
    from dataclasses import replace

    from .analysis import summarize
    from .diagnostics import diagnose
    from .fitting import fit

    index, truth, n_subjects, design, prior, sampler, seed, n_jobs = args
    data_seed, fit_seed = _replicate_seeds(seed, index)
    try:
        data, _ = simulate_dataset(truth, n_subjects, seed=data_seed, **design)
        store = fit(data, prior, replace(sampler, seed=fit_seed), n_jobs=n_jobs)
    except Exception as exc:  # a failed replicate is flagged, the study goes on
        log.warning("replicate %d failed: %s", index, exc)
        return ReplicateResult(index, False, error=f"{type(exc).__name__}: {exc}")
    pop = truth.population()
    summ = {s.name: s for s in summarize(store, POPULATION_PARAMETERS)}
    rep = diagnose(store)
    return ReplicateResult(
        index, True,
        means={k: summ[k].mean for k in POPULATION_PARAMETERS},
        covered={k: summ[k].covers(pop[k]) for k in POPULATION_PARAMETERS},
        max_rhat=rep.max_rhat(),
        divergences=store.divergences(),
    )


def run_sim_study(replicates, truth: TruthRecord, sampler_config, prior_config=None,
                  n_subjects=100, seed=0, design=None, n_jobs=1):
    """Simulate, fit and score ``replicates`` datasets.

    ``design`` holds extra :func:`simulate_dataset` arguments.  With
    ``n_jobs > 1`` replicates run in parallel worker processes and the chains
    inside each replicate run sequentially; results do not depend on it.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    prior_config = PriorConfig() if prior_config is None else prior_config
    design = dict(design or {})
    inner_jobs = 1 if n_jobs > 1 else None
    jobs = [(r, truth, n_subjects, design, prior_config, sampler_config, seed, inner_jobs)
            for r in range(replicates)]
    if n_jobs > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_replicate, jobs))
    else:
        results = [_run_replicate(j) for j in jobs]

    ok = [r for r in results if r.ok]
    rows = []
    for name, value in truth.population().items():
        means = np.array([r.means[name] for r in ok])
        cov = np.array([r.covered[name] for r in ok], dtype=float)
        n = len(ok)
        mean = float(means.mean()) if n else math.nan
        se = float(means.std(ddof=1)) if n > 1 else math.nan
        rows.append(StudyRow(name, float(value), mean, se, mean - float(value),
                             float(cov.mean()) if n else math.nan, n))
    return StudyReport(rows, results)
