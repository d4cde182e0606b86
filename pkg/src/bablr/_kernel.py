"""Compiled log posterior and gradient of the bent-line model.

Mirrors ``BentLineModel._evaluate_numpy`` line for line; the two are
cross-checked in the test suite.  Priors on the nine population parameters
arrive as flat arrays (family code, location, scale, df, folded constant,
support bounds) so the kernel needs no Python objects.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .priors import Prior, log_normalizer

NORMAL, CAUCHY, STUDENT_T, LOGNORMAL = 0, 1, 2, 3
_CODES = {"normal": NORMAL, "half_normal": NORMAL, "half_cauchy": CAUCHY,
          "half_student_t": STUDENT_T, "lognormal": LOGNORMAL}
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def pack_priors(priors, supports):
    """Flatten ``[(Prior, (lower, upper)), ...]`` into kernel arrays."""
    k = len(priors)
    code = np.empty(k, np.int64)
    par = np.empty((k, 6))  # loc, scale, df, const, lower, upper
    for j, (p, (lo, hi)) in enumerate(zip(priors, supports)):
        p: Prior
        lognorm = log_normalizer(p, float(lo), float(hi))
        code[j] = _CODES[p.family]
        s = p.scale
        if code[j] == NORMAL or code[j] == LOGNORMAL:
            const = -math.log(s) - _LOG_SQRT_2PI - lognorm
        elif code[j] == CAUCHY:
            const = -math.log(math.pi * s) - lognorm
        else:
            nu = p.df
            const = (math.lgamma(0.5 * (nu + 1)) - math.lgamma(0.5 * nu)
                     - 0.5 * math.log(nu * math.pi) - math.log(s) - lognorm)
        par[j] = (p.loc, s, p.df or 0.0, const, lo, hi)
    return code, par


@njit(cache=True)
def _prior(code, par, x):
    loc, s, nu, const, lo, hi = par[0], par[1], par[2], par[3], par[4], par[5]
    if not (lo <= x <= hi) or math.isinf(x) or math.isnan(x):
        return -math.inf, 0.0
    if code == LOGNORMAL:
        if x <= 0.0:
            return -math.inf, 0.0
        lx = math.log(x)
        r = (lx - loc) / s
        return const - lx - 0.5 * r * r, -(1.0 + r / s) / x
    r = (x - loc) / s
    if code == NORMAL:
        return const - 0.5 * r * r, -r / s
    if code == CAUCHY:
        return const - math.log1p(r * r), -2.0 * r / (s * (1.0 + r * r))
    return (const - 0.5 * (nu + 1.0) * math.log1p(r * r / nu),
            -(nu + 1.0) * r / (s * (nu + r * r)))


@njit(cache=True)
def _log_ndtr_mills(c):
    """``(log Phi(c), phi(c) / Phi(c))`` for ``c >= 0``-ish arguments."""
    cdf = 0.5 * math.erfc(-c / _SQRT2)
    logc = math.log(cdf)
    return logc, math.exp(-0.5 * c * c - _LOG_SQRT_2PI - logc)


@njit(cache=True)
def log_density_grad(z, sid, t, y, n, has_bound, bound, nc, codes, pars):
    dim = z.size
    grad = np.zeros(dim)
    m = t.size
    h2 = min(z[2], 709.0)
    b10, b20 = z[0], z[1]
    b30 = -math.exp(h2)
    om0 = z[3] if not has_bound else bound + math.exp(min(z[3], 709.0))
    sy = math.exp(z[4])
    s1 = math.exp(z[5])
    s2 = math.exp(z[6])
    s3 = math.exp(z[7])
    s4 = math.exp(z[8])
    sig = (sy, s1, s2, s3, s4)

    vals = (b10, b20, b30, om0, sy, s1, s2, s3, s4)
    dv = np.empty(9)
    lp = 0.0
    for k in range(9):
        v, d = _prior(codes[k], pars[k], vals[k])
        lp += v
        dv[k] = d
    if not math.isfinite(lp):
        return -math.inf, grad
    g_b10, g_b20, g_b30, g_om0 = dv[0], dv[1], dv[2], dv[3]
    g_logs = np.empty(5)
    for k in range(5):
        g_logs[k] = dv[4 + k] * sig[k]

    o1, o2, o3, o4 = 9, 9 + n, 9 + 2 * n, 9 + 3 * n
    b1i = np.empty(n)
    b2i = np.empty(n)
    b3i = np.empty(n)
    omi = np.empty(n)
    w = np.empty(n)
    for i in range(n):
        e1, e2, e3, e4 = z[o1 + i], z[o2 + i], z[o3 + i], z[o4 + i]
        b1i[i] = b10 + (s1 * e1 if nc else e1)
        b2i[i] = b20 + (s2 * e2 if nc else e2)
        b3i[i] = -math.exp(e3) * (s3 if nc else 1.0)
        if has_bound:
            w[i] = math.exp(e4)
            omi[i] = bound + (s4 * w[i] if nc else w[i])
        else:
            omi[i] = om0 + (s4 * e4 if nc else e4)

    # likelihood
    gb1 = np.zeros(n)
    gb2 = np.zeros(n)
    gb3 = np.zeros(n)
    gom = np.zeros(n)
    if m > 0:
        inv_var = 1.0 / (sy * sy)
        rss = 0.0
        for j in range(m):
            i = sid[j]
            d = t[j] - omi[i]
            slope = b2i[i]
            post = d > 0.0
            if post:
                slope += b3i[i]
            r = y[j] - (b1i[i] + slope * d)
            rss += r * r
            gm = r * inv_var
            gb1[i] += gm
            gb2[i] += gm * d
            if post:
                gb3[i] += gm * d
            gom[i] -= gm * slope
        lp += -0.5 * rss * inv_var - m * (z[4] + _LOG_SQRT_2PI)
        g_logs[0] += rss * inv_var - m

    if n > 0:
        # effects 1 and 2
        for k in range(2):
            s = s1 if k == 0 else s2
            off = o1 if k == 0 else o2
            gb = gb1 if k == 0 else gb2
            acc_lp = 0.0
            acc_g = 0.0
            acc_sum = 0.0
            for i in range(n):
                e = z[off + i]
                acc_sum += gb[i]
                if nc:
                    acc_lp += -0.5 * e * e
                    grad[off + i] = gb[i] * s - e
                    acc_g += gb[i] * s * e
                else:
                    q = e / s
                    acc_lp += -0.5 * q * q
                    grad[off + i] = gb[i] - q / s
                    acc_g += q * q
            if nc:
                lp += acc_lp - n * _LOG_SQRT_2PI
                g_logs[k + 1] += acc_g
            else:
                lp += acc_lp - n * (math.log(s) + _LOG_SQRT_2PI)
                g_logs[k + 1] += acc_g - n
            if k == 0:
                g_b10 += acc_sum
            else:
                g_b20 += acc_sum

        # slope decrement, truncated to (-inf, 0]
        c3 = -b30 / s3
        logc3, lam3 = _log_ndtr_mills(c3)
        qq = 0.0
        qsum = 0.0
        e3sum = 0.0
        extra = 0.0
        for i in range(n):
            q = (b3i[i] - b30) / s3
            qq += q * q
            qsum += q
            e3sum += z[o3 + i]
            a = (gb3[i] - q / s3) * b3i[i]
            grad[o3 + i] = a + 1.0
            extra += a
        lp += -0.5 * qq - n * (math.log(s3) + _LOG_SQRT_2PI) - n * logc3 + e3sum
        g_b30 += qsum / s3 + n * lam3 / s3
        g_logs[3] += qq - n + n * lam3 * c3
        if nc:
            lp += n * z[7]
            g_logs[3] += extra + n

        # change point
        if not has_bound:
            acc_lp = 0.0
            acc_g = 0.0
            acc_sum = 0.0
            for i in range(n):
                e = z[o4 + i]
                acc_sum += gom[i]
                if nc:
                    acc_lp += -0.5 * e * e
                    grad[o4 + i] = gom[i] * s4 - e
                    acc_g += gom[i] * s4 * e
                else:
                    q = e / s4
                    acc_lp += -0.5 * q * q
                    grad[o4 + i] = gom[i] - q / s4
                    acc_g += q * q
            if nc:
                lp += acc_lp - n * _LOG_SQRT_2PI
                g_logs[4] += acc_g
            else:
                lp += acc_lp - n * (math.log(s4) + _LOG_SQRT_2PI)
                g_logs[4] += acc_g - n
            g_om0 += acc_sum
        else:
            c4 = (om0 - bound) / s4
            logc4, lam4 = _log_ndtr_mills(c4)
            qq = 0.0
            qsum = 0.0
            e4sum = 0.0
            acc_g = 0.0
            for i in range(n):
                q = (omi[i] - om0) / s4
                qq += q * q
                qsum += q
                e4sum += z[o4 + i]
                if nc:
                    grad[o4 + i] = (gom[i] * s4 - q) * w[i] + 1.0
                    acc_g += gom[i] * s4 * w[i]
                else:
                    grad[o4 + i] = (gom[i] - q / s4) * w[i] + 1.0
            if nc:
                lp += -0.5 * qq - n * _LOG_SQRT_2PI - n * logc4 + e4sum
                g_om0 += qsum / s4 - n * lam4 / s4
                g_logs[4] += acc_g - c4 * qsum + n * lam4 * c4
            else:
                lp += -0.5 * qq - n * (math.log(s4) + _LOG_SQRT_2PI) - n * logc4 + e4sum
                g_om0 += qsum / s4 - n * lam4 / s4
                g_logs[4] += qq - n + n * lam4 * c4

    grad[0] = g_b10
    grad[1] = g_b20
    grad[2] = g_b30 * b30 + 1.0
    lp += z[2]
    if not has_bound:
        grad[3] = g_om0
    else:
        grad[3] = g_om0 * (om0 - bound) + 1.0
        lp += z[3]
    for k in range(5):
        grad[4 + k] = g_logs[k] + 1.0
        lp += z[4 + k]
    if not math.isfinite(lp):
        return -math.inf, grad
    for k in range(dim):
        if not math.isfinite(grad[k]):
            return -math.inf, grad
    return lp, grad
