"""Prior families used by the bent-line model.

Every prior is evaluated on the constrained scale and is truncated to the
support of the parameter it is attached to.  ``half_*`` families therefore
only make sense on a one-sided support; the normalising constant of the
truncation is computed once and cached.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

__all__ = ["Prior", "FAMILIES", "parse_prior", "prior_logpdf", "log_normalizer"]

FAMILIES = ("normal", "half_normal", "half_cauchy", "half_student_t", "lognormal")

_ALIASES = {
    "halfnormal": "half_normal",
    "halfcauchy": "half_cauchy",
    "half_t": "half_student_t",
    "halft": "half_student_t",
    "half_t_student": "half_student_t",
    "halfstudentt": "half_student_t",
    "log_normal": "lognormal",
}

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    """A univariate prior ``family(loc, scale)``; ``df`` only for half_student_t."""

    family: str
    loc: float
    scale: float
    df: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"prior scale must be positive, got {self.scale}")
        if not math.isfinite(self.loc):
            raise ValueError("prior location must be finite")
        if self.family == "half_student_t":
            if self.df is None or not self.df > 0:
                raise ValueError("half_student_t needs a positive df")
        elif self.df is not None:
            raise ValueError(f"df is only meaningful for half_student_t, not {self.family}")

    def __str__(self):
        if self.family == "half_student_t":
            return f"half_student_t({_fmt(self.df)},{_fmt(self.loc)},{_fmt(self.scale)})"
        return f"{self.family}({_fmt(self.loc)},{_fmt(self.scale)})"


def _fmt(x):
    return repr(float(x))


_PRIOR_RE = re.compile(r"^\s*([A-Za-z_\-]+)\s*\(([^)]*)\)\s*$")


def parse_prior(text: str) -> Prior:
    """Parse ``"lognormal(0,0.2)"`` or ``"half_student_t(3,0,1)"``."""
    m = _PRIOR_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse prior {text!r}; expected family(loc,scale)")
    family = m.group(1).strip().lower().replace("-", "_")
    family = _ALIASES.get(family, family)
    try:
        args = [float(a) for a in m.group(2).split(",")]
    except ValueError:
        raise ValueError(f"non-numeric prior argument in {text!r}") from None
    if family == "half_student_t":
        if len(args) != 3:
            raise ValueError("half_student_t takes (df, loc, scale)")
        return Prior(family, args[1], args[2], df=args[0])
    if len(args) != 2:
        raise ValueError(f"{family} takes (loc, scale)")
    return Prior(family, args[0], args[1])


def _base(prior: Prior):
    if prior.family in ("normal", "half_normal"):
        return stats.norm(prior.loc, prior.scale)
    if prior.family == "half_cauchy":
        return stats.cauchy(prior.loc, prior.scale)
    if prior.family == "half_student_t":
        return stats.t(prior.df, prior.loc, prior.scale)
    return stats.lognorm(s=prior.scale, scale=math.exp(prior.loc))


@lru_cache(maxsize=256)
def log_normalizer(prior: Prior, lower: float, upper: float) -> float:
    """Log probability mass the untruncated family puts on ``[lower, upper]``."""
    if prior.family.startswith("half_") and math.isinf(lower) and math.isinf(upper):
        raise ValueError(f"{prior.family} prior needs a one-sided support")
    if prior.family == "lognormal":
        if lower < 0:
            raise ValueError("lognormal prior is only allowed on a positive support")
        lower = max(lower, 0.0)
    base = _base(prior)
    # log(F(upper) - F(lower)) via whichever tail is more accurate
    if math.isinf(upper):
        return float(base.logsf(lower)) if not math.isinf(lower) else 0.0
    if math.isinf(lower):
        return float(base.logcdf(upper))
    mass = base.cdf(upper) - base.cdf(lower)
    return math.log(mass)


def prior_logpdf(prior: Prior, x, lower=-math.inf, upper=math.inf):
    """Log density of ``prior`` truncated to ``[lower, upper]`` and its x-derivative.

    Returns ``(logp, dlogp_dx)``.  Values outside the support give ``-inf``
    with a zero derivative.  Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    lognorm = log_normalizer(prior, float(lower), float(upper))
    loc, s = prior.loc, prior.scale
    fam = prior.family
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam in ("normal", "half_normal"):
            r = (x - loc) / s
            lp = -0.5 * r * r - math.log(s) - _LOG_SQRT_2PI
            dlp = -r / s
        elif fam == "half_cauchy":
            r = (x - loc) / s
            lp = -np.log1p(r * r) - math.log(math.pi * s)
            dlp = -2.0 * r / (s * (1.0 + r * r))
        elif fam == "half_student_t":
            nu = prior.df
            r = (x - loc) / s
            const = (math.lgamma(0.5 * (nu + 1)) - math.lgamma(0.5 * nu)
                     - 0.5 * math.log(nu * math.pi) - math.log(s))
            lp = const - 0.5 * (nu + 1) * np.log1p(r * r / nu)
            dlp = -(nu + 1) * r / (s * (nu + r * r))
        else:
            lx = np.log(x)
            r = (lx - loc) / s
            lp = -lx - math.log(s) - _LOG_SQRT_2PI - 0.5 * r * r
            dlp = -(1.0 + r / s) / x
    lp = lp - lognorm
    outside = (x < lower) | (x > upper) | ~np.isfinite(x)
    if fam == "lognormal":
        outside = outside | (x <= 0)
    if np.ndim(lp) == 0:
        if outside:
            return -math.inf, 0.0
        return float(lp), float(dlp)
    lp = np.where(outside, -np.inf, lp)
    dlp = np.where(outside, 0.0, dlp)
    return lp, dlp


def scalar_logpdf(prior: Prior, lower=-math.inf, upper=math.inf):
    """Fast scalar version of :func:`prior_logpdf` with constants folded in.

    Returns a function ``x -> (logp, dlogp_dx)``.
    """
    lognorm = log_normalizer(prior, float(lower), float(upper))
    loc, s, fam = prior.loc, prior.scale, prior.family
    if fam in ("normal", "half_normal"):
        const = -math.log(s) - _LOG_SQRT_2PI - lognorm

        def kernel(x):
            r = (x - loc) / s
            return const - 0.5 * r * r, -r / s
    elif fam == "half_cauchy":
        const = -math.log(math.pi * s) - lognorm

        def kernel(x):
            r = (x - loc) / s
            return const - math.log1p(r * r), -2.0 * r / (s * (1.0 + r * r))
    elif fam == "half_student_t":
        nu = prior.df
        const = (math.lgamma(0.5 * (nu + 1)) - math.lgamma(0.5 * nu)
                 - 0.5 * math.log(nu * math.pi) - math.log(s) - lognorm)

        def kernel(x):
            r = (x - loc) / s
            return const - 0.5 * (nu + 1) * math.log1p(r * r / nu), -(nu + 1) * r / (s * (nu + r * r))
    else:
        const = -math.log(s) - _LOG_SQRT_2PI - lognorm

        def kernel(x):
            if x <= 0:
                return -math.inf, 0.0
            lx = math.log(x)
            r = (lx - loc) / s
            return const - lx - 0.5 * r * r, -(1.0 + r / s) / x

    def logpdf(x):
        if not (lower <= x <= upper) or math.isinf(x):
            return -math.inf, 0.0
        return kernel(x)

    return logpdf
