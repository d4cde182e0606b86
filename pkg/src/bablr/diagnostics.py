"""Convergence diagnostics: split R-hat, bulk ESS, sampler summaries.

Degenerate (zero-variance) inputs give ``nan`` rather than a reassuring 1.0;
the report lists such parameters under ``undefined``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _stats

__all__ = [
    "split_rhat",
    "ess_bulk",
    "ess_mean",
    "mcse_mean",
    "autocovariance",
    "DiagnosticsReport",
    "diagnose",
]


def _as_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected draws shaped (chain, iteration)")
    return x


def _split_chains(x):
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _degenerate(x):
    return not np.all(np.isfinite(x)) or np.ptp(x) == 0


def split_rhat(draws):
    """Potential scale reduction over the half-chains of ``draws`` (chain, iteration)."""
    x = _as_chains(draws)
    if x.shape[1] < 2:
        raise ValueError("need at least 2 iterations per chain")
    if _degenerate(x):
        return math.nan
    x = _split_chains(x)
    n = x.shape[1]
    w = x.var(axis=1, ddof=1).mean()
    if w == 0:
        return math.nan
    b = n * x.mean(axis=1).var(ddof=1)
    return float(math.sqrt(((n - 1) / n * w + b / n) / w))


def autocovariance(x):
    """Biased autocovariance of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conjugate(f), size)[:n] / n


def _ess(x):
    m, n = x.shape
    acov = np.array([autocovariance(c) for c in x])
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return math.nan
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1]
    # caps ESS at total * log10(total) for antithetic chains
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def _rank_normalize(x):
    ranks = _stats.rankdata(x, method="average").reshape(x.shape)
    s = x.size
    return _stats.norm.ppf((ranks - 0.375) / (s + 0.25))


def ess_bulk(draws):
    """Rank-normalised bulk effective sample size over split chains."""
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise ValueError("need at least 4 iterations per chain")
    if _degenerate(x):
        return math.nan
    return _ess(_rank_normalize(_split_chains(x)))


def ess_mean(draws):
    """Effective sample size for the mean (no rank normalisation)."""
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise ValueError("need at least 4 iterations per chain")
    if _degenerate(x):
        return math.nan
    return _ess(_split_chains(x))


def mcse_mean(draws):
    x = _as_chains(draws)
    return float(x.std(ddof=1) / math.sqrt(ess_mean(x)))


@dataclass
class DiagnosticsReport:
    rhat: dict
    ess_bulk: dict
    divergences: int
    treedepth_hits: int
    accept_stat: list
    divergences_per_chain: list = field(default_factory=list)
    treedepth_hits_per_chain: list = field(default_factory=list)
    max_treedepth: int | None = None

    @property
    def undefined(self):
        return sorted(k for k, v in self.rhat.items() if not math.isfinite(v))

    def max_rhat(self):
        vals = [v for v in self.rhat.values() if math.isfinite(v)]
        return max(vals) if vals else math.nan

    def converged(self, threshold=1.05):
        """True when every defined R-hat is below ``threshold``."""
        return all(v < threshold for v in self.rhat.values() if math.isfinite(v))

    def to_dict(self):
        def clean(v):
            return None if not math.isfinite(v) else v
        return {
            "rhat": {k: clean(v) for k, v in self.rhat.items()},
            "ess_bulk": {k: clean(v) for k, v in self.ess_bulk.items()},
            "divergences": self.divergences,
            "divergences_per_chain": self.divergences_per_chain,
            "treedepth_hits": self.treedepth_hits,
            "treedepth_hits_per_chain": self.treedepth_hits_per_chain,
            "max_treedepth": self.max_treedepth,
            "accept_stat": self.accept_stat,
            "undefined": self.undefined,
        }


def diagnose(store, max_treedepth=None):
    """Per-parameter R-hat and bulk ESS plus sampler summaries for a DrawsStore."""
    rhat, ess = {}, {}
    for k, name in enumerate(store.names):
        x = store.draws[:, :, k]
        rhat[name] = split_rhat(x) if x.shape[1] >= 2 else math.nan
        ess[name] = ess_bulk(x) if x.shape[1] >= 4 else math.nan
    st = store.stats
    div = st.get("divergent")
    depth = st.get("treedepth")
    acc = st.get("accept_stat")
    div_chain = [int(v) for v in div.sum(axis=1)] if div is not None else []
    hits = ([int(v) for v in (depth >= max_treedepth).sum(axis=1)]
            if depth is not None and max_treedepth is not None else [])
    return DiagnosticsReport(
        rhat=rhat,
        ess_bulk=ess,
        divergences=sum(div_chain),
        treedepth_hits=sum(hits),
        accept_stat=[float(v) for v in acc.mean(axis=1)] if acc is not None else [],
        divergences_per_chain=div_chain,
        treedepth_hits_per_chain=hits,
        max_treedepth=max_treedepth,
    )
