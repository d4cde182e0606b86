"""Bent-line random change-point model: data, parameters, transforms, density.

Subject ``i`` has mean trajectory

    m_i(t) = beta1_i + beta2_i (t - omega_i)              for t <= omega_i
    m_i(t) = beta1_i + (beta2_i + beta3_i) (t - omega_i)  for t >  omega_i

with ``beta_ki = beta_k0 + u_ki``, ``omega_i = omega_0 + u_4i`` and the slope
decrement constrained to ``beta3_i <= 0``.  Observations are Gaussian around
the mean with standard deviation ``sigma_y``.

Unconstrained coordinates (length ``9 + 4 N``), in order:

====================  ==========================================================
index                 meaning
====================  ==========================================================
0                     beta1_0
1                     beta2_0
2                     log(-beta3_0)
3                     omega_0, or log(omega_0 - L) with a CP lower bound L
4..8                  log sigma_y, log sigma_u1 .. log sigma_u4
9 .. 9+N              effect 1 per subject: u1/sigma_u1 (non-centred) or u1
9+N .. 9+2N           effect 2 per subject: u2/sigma_u2 (non-centred) or u2
9+2N .. 9+3N          log(-beta3_i/sigma_u3) (non-centred) or log(-beta3_i)
9+3N .. 9+4N          effect 4 per subject, see below
====================  ==========================================================

Effect 4 is ``u4/sigma_u4`` (non-centred) or ``u4`` (centred) without a lower
bound; with a bound it is ``log((omega_i - L)/sigma_u4)`` (non-centred) or
``log(omega_i - L)`` (centred).  The constrained vector used for draws has the
same layout with the raw values ``beta3_0, omega_0, sigma_*`` and ``u1..u4``.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from ._kernel import log_density_grad, pack_priors
from .priors import Prior, prior_logpdf, scalar_logpdf

__all__ = [
    "SubjectRecord",
    "LongitudinalDataset",
    "FixedEffects",
    "ScaleParameters",
    "SubjectEffects",
    "ModelParameters",
    "PriorConfig",
    "POPULATION_PARAMETERS",
    "parameter_names",
    "bent_line_mean",
    "to_constrained",
    "to_unconstrained",
    "log_prior",
    "log_likelihood",
    "log_posterior_grad",
    "BentLineModel",
]

POPULATION_PARAMETERS = (
    "beta1_0", "beta2_0", "beta3_0", "omega_0",
    "sigma_y", "sigma_u1", "sigma_u2", "sigma_u3", "sigma_u4",
)
SCALE_PARAMETERS = POPULATION_PARAMETERS[4:]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class SubjectRecord:
    id: str
    times: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        self.id = str(self.id)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.outcomes = np.asarray(self.outcomes, dtype=float).reshape(-1)

    @property
    def n_obs(self):
        return self.times.size


@dataclass
class LongitudinalDataset:
    """Subjects with repeated ``(time, outcome)`` measurements.

    ``strict=False`` admits empty datasets and subjects without observations,
    which is only useful for exercising the prior part of the density.
    """

    subjects: list
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.subjects = [s if isinstance(s, SubjectRecord) else SubjectRecord(*s)
                         for s in self.subjects]
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        if self.strict and not self.subjects:
            raise ValueError("empty dataset")
        few = []
        for s in self.subjects:
            if s.times.size != s.outcomes.size:
                raise ValueError(f"subject {s.id}: times and outcomes differ in length")
            if self.strict and s.times.size < 1:
                raise ValueError(f"subject {s.id} has no observations")
            if not (np.all(np.isfinite(s.times)) and np.all(np.isfinite(s.outcomes))):
                raise ValueError(f"subject {s.id}: non-finite time or outcome")
            if np.any(np.diff(s.times) < 0):
                raise ValueError(f"subject {s.id}: times must be nondecreasing")
            if s.times.size < 3:
                few.append(s.id)
        if self.strict and few:
            warnings.warn(f"{len(few)} subject(s) have fewer than 3 observations",
                          stacklevel=2)

    @property
    def n_subjects(self):
        return len(self.subjects)

    @property
    def ids(self):
        return [s.id for s in self.subjects]

    @property
    def n_obs(self):
        return sum(s.n_obs for s in self.subjects)

    def flat(self):
        """``(subject_index, times, outcomes)`` over all observations."""
        if not self.subjects:
            return np.zeros(0, dtype=np.intp), np.zeros(0), np.zeros(0)
        sid = np.concatenate([np.full(s.n_obs, i, dtype=np.intp)
                              for i, s in enumerate(self.subjects)])
        t = np.concatenate([s.times for s in self.subjects])
        y = np.concatenate([s.outcomes for s in self.subjects])
        return sid, t, y

    def subject(self, subject_id):
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(f"unknown subject id {subject_id!r}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class FixedEffects:
    beta10: float
    beta20: float
    beta30: float
    omega0: float


@dataclass
class ScaleParameters:
    sigma_y: float
    sigma_u1: float
    sigma_u2: float
    sigma_u3: float
    sigma_u4: float

    @property
    def sigma_u(self):
        return np.array([self.sigma_u1, self.sigma_u2, self.sigma_u3, self.sigma_u4])


@dataclass
class SubjectEffects:
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    u4: np.ndarray

    def __post_init__(self):
        for k in ("u1", "u2", "u3", "u4"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float).reshape(-1))

    def as_matrix(self):
        """Effects stacked as an ``(N, 4)`` array."""
        return np.column_stack([self.u1, self.u2, self.u3, self.u4])


@dataclass
class ModelParameters:
    fixed: FixedEffects
    scales: ScaleParameters
    effects: SubjectEffects

    @property
    def n_subjects(self):
        return self.effects.u1.size

    def subject_parameters(self):
        """Per-subject ``(beta1_i, beta2_i, beta3_i, omega_i)`` arrays."""
        f, e = self.fixed, self.effects
        return (f.beta10 + e.u1, f.beta20 + e.u2, f.beta30 + e.u3, f.omega0 + e.u4)

    def to_vector(self):
        f, s, e = self.fixed, self.scales, self.effects
        head = [f.beta10, f.beta20, f.beta30, f.omega0,
                s.sigma_y, s.sigma_u1, s.sigma_u2, s.sigma_u3, s.sigma_u4]
        return np.concatenate([np.array(head, dtype=float), e.u1, e.u2, e.u3, e.u4])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        n = (vec.size - 9) // 4
        if vec.size != 9 + 4 * n:
            raise ValueError(f"vector length {vec.size} is not 9 + 4N")
        u = vec[9:].reshape(4, n)
        return cls(FixedEffects(*vec[:4]), ScaleParameters(*vec[4:9]),
                   SubjectEffects(*u))


def parameter_names(ids):
    """Names of the constrained vector for subjects ``ids``."""
    ids = [str(i) for i in ids]
    return list(POPULATION_PARAMETERS) + [f"u{k}[{i}]" for k in range(1, 5) for i in ids]


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of every prior term plus the change-point lower bound.

    Defaults are the simulation settings; :meth:`application` gives the
    settings used for real cohorts (CP mean 70, bound at 40, lognormal prior
    on ``sigma_u2``).
    """

    beta1_0: Prior = Prior("normal", 0.0, 10.0)
    beta2_0: Prior = Prior("normal", 0.0, 1.0)
    beta3_0: Prior = Prior("half_normal", 0.0, 5.0)
    omega_0: Prior = Prior("normal", 10.0, 10.0)
    sigma_y: Prior = Prior("half_cauchy", 0.0, 10.0)
    sigma_u1: Prior = Prior("half_cauchy", 0.0, 10.0)
    sigma_u2: Prior = Prior("half_cauchy", 0.0, 1.0)
    sigma_u3: Prior = Prior("half_cauchy", 0.0, 5.0)
    sigma_u4: Prior = Prior("half_cauchy", 0.0, 10.0)
    u_loc: tuple = (0.0, 0.0, 0.0, 0.0)
    cp_lower_bound: float | None = None
    noncentered: bool = True

    def __post_init__(self):
        if any(float(v) != 0.0 for v in self.u_loc) or len(self.u_loc) != 4:
            raise ValueError("random-effect prior locations must all be 0; a nonzero "
                             "location is not identifiable against the fixed effect")
        if self.cp_lower_bound is not None and not math.isfinite(self.cp_lower_bound):
            raise ValueError("cp_lower_bound must be finite")
        for name in ("beta1_0", "beta2_0"):
            if getattr(self, name).family != "normal":
                raise ValueError(f"{name} prior must be normal")
        if self.beta3_0.family == "lognormal":
            raise ValueError("beta3_0 lives on (-inf, 0]; lognormal is not allowed")
        if self.omega_0.family != "normal":
            raise ValueError("omega_0 prior must be normal")
        # trigger support checks (raises for invalid family/support pairs)
        for name in POPULATION_PARAMETERS:
            self.support_normalized(name)

    @classmethod
    def simulation(cls, **changes):
        return cls(**changes)

    @classmethod
    def application(cls, **changes):
        base = dict(omega_0=Prior("normal", 70.0, 10.0),
                    sigma_u2=Prior("lognormal", 0.0, 0.2),
                    cp_lower_bound=40.0)
        base.update(changes)
        return cls(**base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def support(self, name):
        if name == "beta3_0":
            return -math.inf, 0.0
        if name == "omega_0":
            lo = -math.inf if self.cp_lower_bound is None else float(self.cp_lower_bound)
            return lo, math.inf
        if name in SCALE_PARAMETERS:
            return 0.0, math.inf
        return -math.inf, math.inf

    def support_normalized(self, name):
        prior = getattr(self, name)
        lo, hi = self.support(name)
        return prior_logpdf(prior, _probe(lo, hi), lo, hi)

    def items(self):
        """``(name, value)`` pairs of every setting, for manifests."""
        out = [(n, str(getattr(self, n))) for n in POPULATION_PARAMETERS]
        out.append(("cp_lower_bound", "none" if self.cp_lower_bound is None
                    else repr(float(self.cp_lower_bound))))
        out.append(("noncentered", str(bool(self.noncentered)).lower()))
        return out


def _probe(lo, hi):
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(hi):
        return lo + 1.0
    return hi - 1.0


# ---------------------------------------------------------------------------
# mean function and transforms
# ---------------------------------------------------------------------------


def bent_line_mean(beta1, beta2, beta3, omega, t):
    """Bent-line mean; the pre-change branch is used at ``t == omega``."""
    d = np.subtract(t, omega)
    post = d > 0
    out = beta1 + np.where(post, np.add(beta2, beta3), beta2) * d
    return float(out) if np.ndim(out) == 0 else out


def _split(z, n):
    z = np.asarray(z, dtype=float)
    if z.shape != (9 + 4 * n,):
        raise ValueError(f"expected an unconstrained vector of length {9 + 4 * n}")
    return z[:9], z[9:].reshape(4, n)


def to_constrained(z, config: PriorConfig, n_subjects=None):
    """Map unconstrained coordinates to :class:`ModelParameters`.

    Returns ``(params, log_jacobian)``.  An overflowing ``exp`` gives a
    ``log_jacobian`` of ``-inf`` so callers can reject the point.
    """
    z = np.asarray(z, dtype=float)
    n = (z.size - 9) // 4 if n_subjects is None else n_subjects
    head, e = _split(z, n)
    L = config.cp_lower_bound
    nc = config.noncentered
    with np.errstate(over="ignore", invalid="ignore"):
        beta30 = -math.exp(head[2]) if head[2] < 709 else -math.inf
        logj = head[2]
        if L is None:
            omega0 = head[3]
        else:
            omega0 = L + math.exp(head[3]) if head[3] < 709 else math.inf
            logj += head[3]
        sig = np.exp(head[4:9])
        logj += head[4:9].sum()
        s1, s2, s3, s4 = sig[1:]
        if nc:
            u1, u2 = s1 * e[0], s2 * e[1]
            logj += n * (head[5] + head[6])
        else:
            u1, u2 = e[0].copy(), e[1].copy()
        b3i = -np.exp(e[2]) * (s3 if nc else 1.0)
        logj += e[2].sum() + (n * head[7] if nc else 0.0)
        u3 = b3i - beta30
        if L is None:
            if nc:
                u4 = s4 * e[3]
                logj += n * head[8]
            else:
                u4 = e[3].copy()
        else:
            w = np.exp(e[3])
            om_i = L + (s4 * w if nc else w)
            logj += e[3].sum() + (n * head[8] if nc else 0.0)
            u4 = om_i - omega0
    params = ModelParameters(FixedEffects(head[0], head[1], beta30, omega0),
                             ScaleParameters(*sig), SubjectEffects(u1, u2, u3, u4))
    vec = params.to_vector()
    if not (np.all(np.isfinite(vec)) and math.isfinite(logj)):
        logj = -math.inf
    return params, float(logj)


def to_unconstrained(params: ModelParameters, config: PriorConfig):
    """Inverse of :func:`to_constrained`."""
    f, s, e = params.fixed, params.scales, params.effects
    L = config.cp_lower_bound
    nc = config.noncentered
    sig = np.array([s.sigma_y, s.sigma_u1, s.sigma_u2, s.sigma_u3, s.sigma_u4])
    head = np.empty(9)
    head[0], head[1] = f.beta10, f.beta20
    head[2] = math.log(-f.beta30)
    head[3] = f.omega0 if L is None else math.log(f.omega0 - L)
    head[4:9] = np.log(sig)
    z1 = e.u1 / s.sigma_u1 if nc else e.u1
    z2 = e.u2 / s.sigma_u2 if nc else e.u2
    z3 = np.log(-(f.beta30 + e.u3) / (s.sigma_u3 if nc else 1.0))
    if L is None:
        z4 = e.u4 / s.sigma_u4 if nc else e.u4
    else:
        gap = f.omega0 + e.u4 - L
        z4 = np.log(gap / s.sigma_u4) if nc else np.log(gap)
    return np.concatenate([head, z1, z2, z3, z4])


# ---------------------------------------------------------------------------
# densities on the constrained scale
# ---------------------------------------------------------------------------


def _norm_lpdf(x, loc, scale):
    r = (x - loc) / scale
    return -0.5 * r * r - np.log(scale) - _LOG_SQRT_2PI


def log_prior(params: ModelParameters, config: PriorConfig):
    """Sum of all prior log densities; ``-inf`` outside the support."""
    f, s, e = params.fixed, params.scales, params.effects
    total = 0.0
    values = dict(zip(POPULATION_PARAMETERS, params.to_vector()[:9]))
    for name in POPULATION_PARAMETERS:
        lo, hi = config.support(name)
        lp, _ = prior_logpdf(getattr(config, name), values[name], lo, hi)
        total += lp
    if not math.isfinite(total):
        return -math.inf
    n = params.n_subjects
    if n == 0:
        return float(total)
    b1, b2, b3, om = params.subject_parameters()
    if np.any(b3 > 0):
        return -math.inf
    L = config.cp_lower_bound
    if L is not None and np.any(om < L):
        return -math.inf
    total += _norm_lpdf(e.u1, 0.0, s.sigma_u1).sum()
    total += _norm_lpdf(e.u2, 0.0, s.sigma_u2).sum()
    total += _norm_lpdf(b3, f.beta30, s.sigma_u3).sum() - n * log_ndtr(-f.beta30 / s.sigma_u3)
    if L is None:
        total += _norm_lpdf(e.u4, 0.0, s.sigma_u4).sum()
    else:
        total += (_norm_lpdf(om, f.omega0, s.sigma_u4).sum()
                  - n * log_ndtr((f.omega0 - L) / s.sigma_u4))
    return float(total)


def log_likelihood(params: ModelParameters, data: LongitudinalDataset):
    """Gaussian log likelihood of all observations around their bent lines."""
    sid, t, y = data.flat()
    if t.size == 0:
        return 0.0
    b1, b2, b3, om = params.subject_parameters()
    m = bent_line_mean(b1[sid], b2[sid], b3[sid], om[sid], t)
    return float(_norm_lpdf(y, m, params.scales.sigma_y).sum())


def _mills(x):
    """phi(x) / Phi(x), stable for very negative x."""
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI - log_ndtr(x))


# ---------------------------------------------------------------------------
# the model object used by the sampler
# ---------------------------------------------------------------------------


class BentLineModel:
    """Log posterior of the bent-line model in unconstrained coordinates.

    Instances are picklable and stateless after construction, so the same
    object can be shared by concurrently running chains.
    """

    def __init__(self, data: LongitudinalDataset, config: PriorConfig | None = None,
                 backend="compiled"):
        if backend not in ("compiled", "numpy"):
            raise ValueError("backend must be 'compiled' or 'numpy'")
        self.backend = backend
        self.data = data
        self.config = PriorConfig() if config is None else config
        self.n = data.n_subjects
        self.sid, self.t, self.y = data.flat()
        self.m = self.t.size
        self.dim = 9 + 4 * self.n
        self.names = parameter_names(data.ids)
        self._fixed_priors = self._build_priors()
        c = self.config
        self._codes, self._pars = pack_priors(
            [getattr(c, k) for k in POPULATION_PARAMETERS],
            [c.support(k) for k in POPULATION_PARAMETERS])
        self._sid = self.sid.astype(np.int64)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_fixed_priors"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._fixed_priors = self._build_priors()

    def _build_priors(self):
        c = self.config
        return [scalar_logpdf(getattr(c, name), *c.support(name))
                for name in POPULATION_PARAMETERS]

    def __call__(self, z):
        return self.log_density_gradient(z)

    def constrain(self, z):
        """Constrained vector (draws layout) for unconstrained ``z``."""
        params, _ = to_constrained(z, self.config, self.n)
        return params.to_vector()

    def constrain_draws(self, zs):
        """Vectorised :meth:`constrain` over the leading axes of ``zs``."""
        zs = np.asarray(zs, dtype=float)
        flat = zs.reshape(-1, self.dim)
        out = np.empty_like(flat)
        for k, z in enumerate(flat):
            out[k] = self.constrain(z)
        return out.reshape(zs.shape)

    def unconstrain(self, params):
        return to_unconstrained(params, self.config)

    def log_density(self, z):
        return self.log_density_gradient(z)[0]

    def log_density_gradient(self, z):
        """Log posterior (up to the evidence) and its gradient at ``z``."""
        z = np.ascontiguousarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected an unconstrained vector of length {self.dim}")
        n, L, nc = self.n, self.config.cp_lower_bound, self.config.noncentered
        if self.backend == "compiled":
            lp, grad = log_density_grad(z, self._sid, self.t, self.y, n, L is not None,
                                        0.0 if L is None else float(L), nc,
                                        self._codes, self._pars)
            if lp == -math.inf:
                return -math.inf, np.full(self.dim, np.nan)
            return lp, grad
        else:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lp, grad = self._evaluate_numpy(z, n, L, nc)
        if not math.isfinite(lp) or grad is None or not np.all(np.isfinite(grad)):
            return -math.inf, np.full(self.dim, np.nan)
        return lp, grad

    def _evaluate_numpy(self, z, n, L, nc):
        # reference implementation; the compiled kernel mirrors it
        head = z[:9]
        e1, e2, e3, e4 = z[9:].reshape(4, n)
        grad = np.zeros(self.dim)
        g_head = grad[:9]
        g1, g2, g3, g4 = grad[9:].reshape(4, n)

        b10, b20 = head[0], head[1]
        b30 = -math.exp(min(head[2], 709.0))
        om0 = head[3] if L is None else L + math.exp(min(head[3], 709.0))
        sig = np.exp(head[4:9])
        sy, s1, s2, s3, s4 = sig
        if L is None:
            u4 = s4 * e4 if nc else e4
            om_i = om0 + u4
        else:
            w = np.exp(e4)
            om_i = L + (s4 * w if nc else w)
        u1 = s1 * e1 if nc else e1
        u2 = s2 * e2 if nc else e2
        b1i = b10 + u1
        b2i = b20 + u2
        b3i = -np.exp(e3) * (s3 if nc else 1.0)

        # fixed-effect and scale priors on the constrained scale
        vals = (b10, b20, b30, om0, sy, s1, s2, s3, s4)
        dvals = np.empty(9)
        lp = 0.0
        for k, logpdf in enumerate(self._fixed_priors):
            v, dv = logpdf(vals[k])
            lp += v
            dvals[k] = dv
        if not math.isfinite(lp):
            return -math.inf, None
        g_b10, g_b20, g_b30, g_om0 = dvals[:4]
        g_logs = dvals[4:] * sig

        # likelihood
        sid = self.sid
        if self.m:
            d = self.t - om_i[sid]
            post = d > 0
            b3obs = np.where(post, b3i[sid], 0.0)
            slope = b2i[sid] + b3obs
            r = self.y - (b1i[sid] + slope * d)
            inv_var = 1.0 / (sy * sy)
            rss = float(r @ r)
            lp += -0.5 * rss * inv_var - self.m * (head[4] + _LOG_SQRT_2PI)
            g_logs[0] += rss * inv_var - self.m
            gm = r * inv_var
            gb1 = np.bincount(sid, gm, n)
            gb2 = np.bincount(sid, gm * d, n)
            gb3 = np.bincount(sid, np.where(post, gm * d, 0.0), n)
            gom = -np.bincount(sid, gm * slope, n)
        else:
            gb1 = gb2 = gb3 = gom = np.zeros(n)

        if n:
            # effects 1 and 2
            for gb, e, u, s, k, gout in ((gb1, e1, u1, s1, 1, g1), (gb2, e2, u2, s2, 2, g2)):
                if nc:
                    lp += -0.5 * float(e @ e) - n * _LOG_SQRT_2PI
                    gout[:] = gb * s - e
                    g_logs[k] += float(gb @ u)
                else:
                    q = u / s
                    lp += -0.5 * float(q @ q) - n * (math.log(s) + _LOG_SQRT_2PI)
                    gout[:] = gb - q / s
                    g_logs[k] += float(q @ q) - n
                if k == 1:
                    g_b10 += gb.sum()
                else:
                    g_b20 += gb.sum()

            # slope decrement, truncated to (-inf, 0]
            q = (b3i - b30) / s3
            c3 = -b30 / s3
            lam3 = float(_mills(c3))
            lp += (-0.5 * float(q @ q) - n * (math.log(s3) + _LOG_SQRT_2PI)
                   - n * float(log_ndtr(c3)) + e3.sum())
            g3[:] = (gb3 - q / s3) * b3i + 1.0
            g_b30 += q.sum() / s3 + n * lam3 / s3
            g_logs[3] += float(q @ q) - n + n * lam3 * c3
            if nc:
                lp += n * head[7]
                g_logs[3] += float((gb3 - q / s3) @ b3i) + n

            # change point
            if L is None:
                if nc:
                    lp += -0.5 * float(e4 @ e4) - n * _LOG_SQRT_2PI
                    g4[:] = gom * s4 - e4
                    g_logs[4] += float(gom @ u4)
                else:
                    q = u4 / s4
                    lp += -0.5 * float(q @ q) - n * (math.log(s4) + _LOG_SQRT_2PI)
                    g4[:] = gom - q / s4
                    g_logs[4] += float(q @ q) - n
                g_om0 += gom.sum()
            else:
                c4 = (om0 - L) / s4
                lam4 = float(_mills(c4))
                if nc:
                    z4 = (om_i - om0) / s4
                    lp += (-0.5 * float(z4 @ z4) - n * _LOG_SQRT_2PI
                           - n * float(log_ndtr(c4)) + e4.sum())
                    g4[:] = (gom * s4 - z4) * w + 1.0
                    g_om0 += z4.sum() / s4 - n * lam4 / s4
                    g_logs[4] += float(gom @ (s4 * w)) - c4 * z4.sum() + n * lam4 * c4
                else:
                    q = (om_i - om0) / s4
                    lp += (-0.5 * float(q @ q) - n * (math.log(s4) + _LOG_SQRT_2PI)
                           - n * float(log_ndtr(c4)) + e4.sum())
                    g4[:] = (gom - q / s4) * w + 1.0
                    g_om0 += q.sum() / s4 - n * lam4 / s4
                    g_logs[4] += float(q @ q) - n + n * lam4 * c4

        # transforms of the population coordinates
        g_head[0] = g_b10
        g_head[1] = g_b20
        g_head[2] = g_b30 * b30 + 1.0
        lp += head[2]
        if L is None:
            g_head[3] = g_om0
        else:
            g_head[3] = g_om0 * (om0 - L) + 1.0
            lp += head[3]
        g_head[4:9] = g_logs + 1.0
        lp += head[4:9].sum()
        return float(lp), grad


def log_posterior_grad(z, data: LongitudinalDataset, config: PriorConfig | None = None,
                       backend="compiled"):
    """Log posterior in unconstrained coordinates and its analytic gradient."""
    return BentLineModel(data, config, backend).log_density_gradient(z)
