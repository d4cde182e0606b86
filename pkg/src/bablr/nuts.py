"""Multinomial No-U-Turn transition with a diagonal metric.

Trajectories are built by recursive doubling; states are selected by
multinomial weights ``exp(-H)``, biased towards the newest subtree at the top
level, and termination uses the generalised no-U-turn criterion including the
checks across subtree boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TransitionStats", "nuts_transition", "find_reasonable_step_size"]

MAX_ENERGY_ERROR = 1000.0


@dataclass
class TransitionStats:
    accept_stat: float
    treedepth: int
    n_leapfrog: int
    divergent: bool
    energy: float
    logp: float
    grad: np.ndarray = field(repr=False, default=None)


class _Point:
    __slots__ = ("z", "p", "logp", "grad")

    def __init__(self, z, p, logp, grad):
        self.z = z
        self.p = p
        self.logp = logp
        self.grad = grad


class _Integrator:
    def __init__(self, target, step_size, inv_mass, H0, rng, max_energy_error):
        self.target = target
        self.eps = step_size
        self.inv_mass = inv_mass
        self.H0 = H0
        self.rng = rng
        self.max_energy_error = max_energy_error
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def leapfrog(self, pt, sign):
        eps = sign * self.eps
        p = pt.p + 0.5 * eps * pt.grad
        z = pt.z + eps * self.inv_mass * p
        logp, grad = self.target(z)
        if math.isfinite(logp):
            p = p + 0.5 * eps * grad
        return _Point(z, p, logp, grad)

    def hamiltonian(self, pt):
        if not math.isfinite(pt.logp):
            return math.inf
        h = -pt.logp + 0.5 * np.dot(pt.p, self.inv_mass * pt.p)
        return h if math.isfinite(h) else math.inf


def _no_u_turn(p_sharp_minus, p_sharp_plus, rho):
    return np.dot(p_sharp_plus, rho) > 0 and np.dot(p_sharp_minus, rho) > 0


def _logaddexp(a, b):
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi)) if lo > -math.inf else hi


def _build_tree(ig, depth, pt, sign):
    """Returns ``(valid, frontier, sample, ps_beg, ps_end, rho, p_beg, p_end, log_w)``."""
    if depth == 0:
        new = ig.leapfrog(pt, sign)
        ig.n_leapfrog += 1
        h = ig.hamiltonian(new)
        if h - ig.H0 > ig.max_energy_error:
            ig.divergent = True
        log_w = ig.H0 - h
        ig.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
        if ig.divergent:
            return (False,) + (None,) * 8
        p_sharp = ig.inv_mass * new.p
        return True, new, new, p_sharp, p_sharp, new.p.copy(), new.p, new.p, log_w

    init = _build_tree(ig, depth - 1, pt, sign)
    if not init[0]:
        return init
    _, front_i, samp_i, ps_beg, ps_init_end, rho_i, p_beg, p_init_end, lw_i = init
    final = _build_tree(ig, depth - 1, front_i, sign)
    if not final[0]:
        return final
    _, front_f, samp_f, ps_final_beg, ps_end, rho_f, p_final_beg, p_end, lw_f = final

    log_w = _logaddexp(lw_i, lw_f)
    if lw_f > log_w or ig.rng.uniform() < math.exp(lw_f - log_w):
        sample = samp_f
    else:
        sample = samp_i
    rho = rho_i + rho_f
    persist = (_no_u_turn(ps_beg, ps_end, rho)
               and _no_u_turn(ps_beg, ps_final_beg, rho_i + p_final_beg)
               and _no_u_turn(ps_init_end, ps_end, rho_f + p_init_end))
    return persist, front_f, sample, ps_beg, ps_end, rho, p_beg, p_end, log_w


def nuts_transition(z, target, step_size, inv_mass, max_treedepth, rng,
                    logp=None, grad=None, max_energy_error=MAX_ENERGY_ERROR):
    """One NUTS transition from position ``z``.

    ``target(z)`` must return ``(log_density, gradient)``; a non-finite
    density marks a point outside the support.  ``logp``/``grad`` at ``z``
    may be passed in to save one evaluation.  Returns ``(new_z, stats)``.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    inv_mass = np.asarray(inv_mass, dtype=float)
    if np.any(inv_mass <= 0):
        raise ValueError("inverse mass diagonal must be strictly positive")
    z = np.asarray(z, dtype=float)
    if logp is None or grad is None:
        logp, grad = target(z)
    if not math.isfinite(logp):
        raise ValueError("target density is not finite at the starting position")

    p0 = rng.standard_normal(z.size) / np.sqrt(inv_mass)
    start = _Point(z, p0, logp, grad)
    H0 = -logp + 0.5 * float(p0 @ (inv_mass * p0))
    ig = _Integrator(target, step_size, inv_mass, H0, rng, max_energy_error)

    fwd = bck = start
    p_sharp0 = inv_mass * p0
    ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp0
    p_fwd_bck = p_bck_fwd = p_fwd_fwd = p_bck_bck = p0
    rho = p0.copy()
    log_w = 0.0
    sample = start
    depth = 0

    while depth < max_treedepth:
        if rng.uniform() > 0.5:
            rho_bck = rho
            p_bck_fwd, ps_bck_fwd = p_fwd_fwd, ps_fwd_fwd
            res = _build_tree(ig, depth, fwd, +1)
            if not res[0]:
                break
            _, fwd, sub_sample, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, lw_sub = res
        else:
            rho_fwd = rho
            p_fwd_bck, ps_fwd_bck = p_bck_bck, ps_bck_bck
            res = _build_tree(ig, depth, bck, -1)
            if not res[0]:
                break
            _, bck, sub_sample, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, lw_sub = res
        depth += 1
        if lw_sub > log_w or rng.uniform() < math.exp(lw_sub - log_w):
            sample = sub_sample
        log_w = _logaddexp(log_w, lw_sub)
        rho = rho_bck + rho_fwd
        persist = (_no_u_turn(ps_bck_bck, ps_fwd_fwd, rho)
                   and _no_u_turn(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
                   and _no_u_turn(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd))
        if not persist:
            break

    accept = ig.sum_metro / ig.n_leapfrog if ig.n_leapfrog else 0.0
    energy = -sample.logp + 0.5 * float(sample.p @ (inv_mass * sample.p))
    stats = TransitionStats(accept_stat=accept, treedepth=depth, n_leapfrog=ig.n_leapfrog,
                            divergent=ig.divergent, energy=energy, logp=sample.logp,
                            grad=sample.grad)
    return sample.z, stats


def find_reasonable_step_size(z, target, step_size, inv_mass, rng, logp=None, grad=None):
    """Double or halve ``step_size`` until one leapfrog step crosses 80% acceptance."""
    z = np.asarray(z, dtype=float)
    if logp is None or grad is None:
        logp, grad = target(z)
    if not (step_size > 0 and math.isfinite(step_size)) or step_size > 1e7:
        return step_size
    log_target = math.log(0.8)

    def delta_h(eps):
        p = rng.standard_normal(z.size) / np.sqrt(inv_mass)
        h0 = -logp + 0.5 * float(p @ (inv_mass * p))
        ig = _Integrator(target, eps, inv_mass, h0, rng, MAX_ENERGY_ERROR)
        new = ig.leapfrog(_Point(z, p, logp, grad), 1)
        return h0 - ig.hamiltonian(new)

    direction = 1 if delta_h(step_size) > log_target else -1
    while True:
        step_size = step_size * (2.0 ** direction)
        if step_size > 1e7:
            raise RuntimeError("step size diverged upwards; is the target improper?")
        if step_size == 0:
            raise RuntimeError("step size collapsed to zero; check the target density")
        dh = delta_h(step_size)
        if direction == 1 and not dh > log_target:
            return step_size
        if direction == -1 and not dh < log_target:
            return step_size
