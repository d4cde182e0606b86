"""Posterior summaries, trajectory quantiles, effect correlations, predictive checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import POPULATION_PARAMETERS, bent_line_mean

__all__ = [
    "ParameterSummary",
    "summarize",
    "subject_parameter_draws",
    "individual_trajectory",
    "QuantileCurves",
    "population_quantile_curves",
    "CorrelationPosterior",
    "random_effect_correlations",
    "PredictiveDistribution",
    "predictive_cdf",
    "predictive_quantile",
    "predictive_distribution",
    "HoldoutPoint",
    "ValidationReport",
    "holdout_validation",
    "leave_last_out",
    "compare_fits",
]

EFFECT_PAIRS = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))


@dataclass
class ParameterSummary:
    name: str
    mean: float
    sd: float
    median: float
    lower: float
    upper: float

    def covers(self, value):
        return self.lower <= value <= self.upper


def _summary(name, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return ParameterSummary(name, float(x.mean()), sd, float(med), float(lo), float(hi))


def summarize(store, names=None):
    """Mean, SD, median and equal-tailed 95% interval for each parameter.

    ``store`` is a DrawsStore or a mapping ``name -> draws``.  Quantiles use
    linear interpolation between order statistics.
    """
    if isinstance(store, dict):
        items = store.items() if names is None else ((n, store[n]) for n in names)
        return [_summary(n, x) for n, x in items]
    names = store.names if names is None else names
    return [_summary(n, store[n]) for n in names]


def subject_parameter_draws(store, subject_id):
    """Flattened draws of ``(beta1_i, beta2_i, beta3_i, omega_i)`` for one subject."""
    key = f"[{subject_id}]"
    if f"u1{key}" not in store.names:
        raise KeyError(f"subject {subject_id!r} is not in the fit")
    b1 = store.flat("beta1_0") + store.flat(f"u1{key}")
    b2 = store.flat("beta2_0") + store.flat(f"u2{key}")
    b3 = store.flat("beta3_0") + store.flat(f"u3{key}")
    om = store.flat("omega_0") + store.flat(f"u4{key}")
    return b1, b2, b3, om


def _all_subject_draws(store):
    """``(S, N)`` arrays of subject parameters for every subject."""
    ids = store.subject_ids()
    s = store.n_chains * store.n_samples
    out = []
    for k, fixed in zip(range(1, 5), ("beta1_0", "beta2_0", "beta3_0", "omega_0")):
        cols = [store.index(f"u{k}[{i}]") for i in ids]
        u = store.draws[:, :, cols].reshape(s, len(ids))
        out.append(store.flat(fixed)[:, None] + u)
    return ids, out


def _trajectories(b1, b2, b3, om, grid):
    grid = np.asarray(grid, dtype=float)
    return bent_line_mean(b1[..., None], b2[..., None], b3[..., None], om[..., None], grid)


def individual_trajectory(store, subject_id, age_grid, quantiles=(0.025, 0.5, 0.975)):
    """Quantiles of one subject's expected trajectory; shape ``(len(q), len(grid))``.

    Residual noise is not included: these are bands of the mean curve.
    """
    b1, b2, b3, om = subject_parameter_draws(store, subject_id)
    traj = _trajectories(b1, b2, b3, om, age_grid)
    return np.quantile(traj, quantiles, axis=0)


@dataclass
class QuantileCurves:
    age_grid: np.ndarray
    quantiles: np.ndarray
    values: np.ndarray  # (len(quantiles), len(age_grid))

    def curve(self, q):
        k = int(np.argmin(np.abs(self.quantiles - q)))
        if abs(self.quantiles[k] - q) > 1e-12:
            raise KeyError(f"quantile {q} was not computed")
        return self.values[k]


def _check_quantiles(quantiles):
    q = np.asarray(quantiles, dtype=float).reshape(-1)
    if q.size == 0 or np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantiles must lie strictly inside (0, 1)")
    if np.any(np.diff(q) <= 0):
        raise ValueError("quantiles must be strictly increasing")
    return q


def population_quantile_curves(store, age_grid, quantiles=(0.1, 0.5, 0.9), pooled=False):
    """Quantiles across subjects of their posterior-median trajectories.

    With ``pooled=True`` the quantiles are taken over every (draw, subject)
    trajectory instead.
    """
    q = _check_quantiles(quantiles)
    grid = np.asarray(age_grid, dtype=float)
    _, (b1, b2, b3, om) = _all_subject_draws(store)
    traj = _trajectories(b1, b2, b3, om, grid)  # (S, N, G)
    if pooled:
        values = np.quantile(traj.reshape(-1, grid.size), q, axis=0)
    else:
        med = np.median(traj, axis=0)  # (N, G)
        values = np.quantile(med, q, axis=0)
    return QuantileCurves(grid, q, values)


@dataclass
class CorrelationPosterior:
    pairs: tuple
    draws: np.ndarray  # (S_valid, 6)
    mean: np.ndarray
    sd: np.ndarray
    skipped: int

    def table(self):
        """Rows ``(pair label, mean, sd)`` in the usual 12,13,14,23,24,34 order."""
        return [(f"rho_u{a}_u{b}", float(m), float(s))
                for (a, b), m, s in zip(self.pairs, self.mean, self.sd)]


def _effects_per_draw(store):
    ids = store.subject_ids()
    s = store.n_chains * store.n_samples
    cols = [[store.index(f"u{k}[{i}]") for i in ids] for k in range(1, 5)]
    return np.stack([store.draws[:, :, c].reshape(s, len(ids)) for c in cols], axis=-1)


def random_effect_correlations(store_or_effects):
    """Per-draw Pearson correlations across subjects of the four random effects.

    Accepts a DrawsStore or an array ``(draws, subjects, 4)``.  Draws where
    some effect has zero variance across subjects are skipped and counted.
    """
    if hasattr(store_or_effects, "draws"):
        u = _effects_per_draw(store_or_effects)
    else:
        u = np.asarray(store_or_effects, dtype=float)
        if u.ndim == 2:
            u = u[None]
    if u.shape[1] < 3:
        raise ValueError("need at least 3 subjects to estimate correlations")
    c = u - u.mean(axis=1, keepdims=True)
    ss = np.einsum("snk,snk->sk", c, c)
    ok = np.all(ss > 0, axis=1)
    c, ss = c[ok], ss[ok]
    rho = np.empty((c.shape[0], len(EFFECT_PAIRS)))
    for j, (a, b) in enumerate(EFFECT_PAIRS):
        num = np.einsum("sn,sn->s", c[:, :, a - 1], c[:, :, b - 1])
        rho[:, j] = num / np.sqrt(ss[:, a - 1] * ss[:, b - 1])
    rho = np.clip(rho, -1.0, 1.0)
    sd = rho.std(axis=0, ddof=1) if rho.shape[0] > 1 else np.zeros(len(EFFECT_PAIRS))
    return CorrelationPosterior(EFFECT_PAIRS, rho, rho.mean(axis=0), sd,
                                int((~ok).sum()))


# ---------------------------------------------------------------------------
# predictive distribution of a new observation
# ---------------------------------------------------------------------------


@dataclass
class PredictiveDistribution:
    """Mixture of normals ``N(mu_draws[k], sigma_x[k])`` with equal weights."""

    mu_draws: np.ndarray
    sigma_x: np.ndarray

    def __post_init__(self):
        self.mu_draws = np.asarray(self.mu_draws, dtype=float).reshape(-1)
        self.sigma_x = np.broadcast_to(np.asarray(self.sigma_x, dtype=float),
                                       self.mu_draws.shape).copy()
        if self.mu_draws.size == 0:
            raise ValueError("predictive distribution needs at least one draw")
        if np.any(self.sigma_x <= 0):
            raise ValueError("sigma_x draws must be positive")


def predictive_cdf(pd: PredictiveDistribution, y):
    """``P(Y <= y)`` averaged over the posterior draws."""
    y = np.asarray(y, dtype=float)
    z = (y[..., None] - pd.mu_draws) / pd.sigma_x
    out = ndtr(z).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def predictive_quantile(pd: PredictiveDistribution, q, tol=1e-8):
    """Invert :func:`predictive_cdf` by bisection to an interval width of ``tol``."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    spread = 40.0 * pd.sigma_x.max()
    lo = pd.mu_draws.min() - spread
    hi = pd.mu_draws.max() + spread
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predictive_cdf(pd, mid) < q:
            lo = mid
        else:
            hi = mid
        if mid == lo == hi:  # pragma: no cover - float resolution reached
            break
    return 0.5 * (lo + hi)


def predictive_distribution(store, subject_id, time):
    """Predictive distribution of a new observation of ``subject_id`` at ``time``."""
    b1, b2, b3, om = subject_parameter_draws(store, subject_id)
    mu = bent_line_mean(b1, b2, b3, om, time)
    return PredictiveDistribution(mu, store.flat("sigma_y"))


@dataclass
class HoldoutPoint:
    subject_id: str
    time: float
    y: float
    q025: float
    q50: float
    q975: float

    @property
    def inside(self):
        return self.q025 <= self.y <= self.q975


@dataclass
class ValidationReport:
    points: list

    @property
    def n_inside(self):
        return sum(p.inside for p in self.points)

    @property
    def coverage(self):
        return self.n_inside / len(self.points) if self.points else math.nan

    def median_pairs(self):
        """``(subject, predictive median, observed y)`` per held-out point."""
        return [(p.subject_id, p.q50, p.y) for p in self.points]


def holdout_validation(store, heldout):
    """Coverage of 95% predictive intervals for held-out ``(subject, time, y)``."""
    known = set(store.subject_ids())
    points = []
    for sid, t, y in heldout:
        sid = str(sid)
        if sid not in known:
            raise KeyError(f"held-out subject {sid!r} is not in the fit")
        pd = predictive_distribution(store, sid, float(t))
        q025, q50, q975 = (predictive_quantile(pd, q) for q in (0.025, 0.5, 0.975))
        points.append(HoldoutPoint(sid, float(t), float(y), q025, q50, q975))
    return ValidationReport(points)


def leave_last_out(dataset, fraction, rng):
    """Remove the last observation of a random ``fraction`` of subjects.

    Only subjects with at least two observations are eligible.  Returns
    ``(training dataset, [(subject, time, y), ...])``.
    """
    from .model import LongitudinalDataset, SubjectRecord

    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    eligible = [k for k, s in enumerate(dataset.subjects) if s.n_obs >= 2]
    n_pick = int(round(fraction * dataset.n_subjects))
    n_pick = min(n_pick, len(eligible))
    picked = set(rng.choice(eligible, size=n_pick, replace=False).tolist()) if n_pick else set()
    subjects, heldout = [], []
    for k, s in enumerate(dataset.subjects):
        if k in picked:
            subjects.append(SubjectRecord(s.id, s.times[:-1], s.outcomes[:-1]))
            heldout.append((s.id, float(s.times[-1]), float(s.outcomes[-1])))
        else:
            subjects.append(s)
    return LongitudinalDataset(subjects), heldout


def compare_fits(stores, names=POPULATION_PARAMETERS):
    """Side-by-side summaries of several fits, keyed by label.

    Returns ``{parameter: {label: ParameterSummary}}``.
    """
    table = {n: {} for n in names}
    for label, store in stores.items():
        for s in summarize(store, names):
            table[s.name][label] = s
    return table
