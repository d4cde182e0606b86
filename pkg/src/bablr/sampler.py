"""Multi-chain NUTS driver with warmup adaptation."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptation import DualAveraging, WindowedAdaptation
from .nuts import find_reasonable_step_size, nuts_transition

__all__ = ["SamplerConfig", "DrawsStore", "InitializationError", "run_chains", "run_chain"]

log = logging.getLogger(__name__)

STAT_NAMES = ("accept_stat", "treedepth", "n_leapfrog", "divergent", "energy", "lp")


class InitializationError(RuntimeError):
    """No finite-density starting point was found."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 5000
    samples: int = 5000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    adapt: bool = True

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.adapt and self.warmup < 150:
            raise ValueError("warmup must be >= 150 when adaptation is enabled")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 0:
            raise ValueError("max_treedepth must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not self.init_radius > 0:
            raise ValueError("init_radius must be positive")

    def items(self):
        return [(k, getattr(self, k)) for k in
                ("chains", "warmup", "samples", "target_accept", "max_treedepth",
                 "seed", "init_radius", "adapt")]


@dataclass
class DrawsStore:
    """Post-warmup draws ``(chain, iteration, parameter)`` on the constrained scale."""

    draws: np.ndarray
    names: list
    stats: dict = field(default_factory=dict)
    step_size: np.ndarray | None = None
    inv_mass: np.ndarray | None = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError("draws must be (chain, iteration, parameter) matching names")
        if np.isnan(self.draws).any():
            raise ValueError("draws contain NaN")
        self._index = {n: k for k, n in enumerate(self.names)}

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_samples(self):
        return self.draws.shape[1]

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __getitem__(self, name):
        """``(chain, iteration)`` array of one parameter."""
        return self.draws[:, :, self.index(name)]

    def flat(self, name):
        return self[name].reshape(-1)

    def subject_ids(self):
        prefix = "u1["
        return [n[len(prefix):-1] for n in self.names if n.startswith(prefix)]

    def divergences(self):
        d = self.stats.get("divergent")
        return 0 if d is None else int(np.sum(d))


def _chain_rng(seed, chain):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))


def _initialize(model, dim, radius, rng, tries=100):
    for _ in range(tries):
        z = rng.uniform(-radius, radius, size=dim)
        logp, grad = model(z)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return z, logp, grad
    raise InitializationError(
        f"no finite log density found in {tries} draws within +/-{radius}")


def run_chain(model, config: SamplerConfig, chain: int):
    """Run one chain; returns ``(unconstrained draws, stats dict, step, inv_mass)``."""
    rng = _chain_rng(config.seed, chain)
    dim = model.dim
    z, logp, grad = _initialize(model, dim, config.init_radius, rng)
    inv_mass = np.ones(dim)
    step = 1.0
    if config.adapt:
        step = find_reasonable_step_size(z, model, step, inv_mass, rng, logp, grad)
        da = DualAveraging(step, config.target_accept)
        windows = WindowedAdaptation(config.warmup, dim)

    out = np.empty((config.samples, dim))
    stats = {k: np.empty(config.samples) for k in STAT_NAMES}
    total = config.warmup + config.samples
    for it in range(total):
        z, st = nuts_transition(z, model, step, inv_mass, config.max_treedepth, rng,
                                logp=logp, grad=grad)
        logp, grad = st.logp, st.grad
        if it < config.warmup:
            if config.adapt:
                step = da.update(st.accept_stat)
                new_mass = windows.add(z)
                if new_mass is not None:
                    inv_mass = new_mass
                    step = find_reasonable_step_size(z, model, step, inv_mass, rng, logp, grad)
                    da.restart(step)
                if it == config.warmup - 1:
                    step = da.final_step_size
            continue
        k = it - config.warmup
        out[k] = z
        stats["accept_stat"][k] = st.accept_stat
        stats["treedepth"][k] = st.treedepth
        stats["n_leapfrog"][k] = st.n_leapfrog
        stats["divergent"][k] = st.divergent
        stats["energy"][k] = st.energy
        stats["lp"][k] = st.logp
    log.debug("chain %d done: step %.3g, %d divergences", chain, step,
              int(stats["divergent"].sum()))
    return out, stats, step, inv_mass


def _run_one(args):
    model, config, chain = args
    return run_chain(model, config, chain)


def run_chains(model, config: SamplerConfig, n_jobs=None):
    """Run ``config.chains`` independent chains and collect a :class:`DrawsStore`.

    ``model`` is callable ``z -> (logp, grad)`` with a ``dim`` attribute;
    optional ``names`` and ``constrain_draws`` map to the constrained scale.
    Chains run in worker processes when ``n_jobs > 1``; the result does not
    depend on ``n_jobs``.
    """
    if n_jobs is None:
        n_jobs = min(config.chains, os.cpu_count() or 1)
    jobs = [(model, config, c) for c in range(config.chains)]
    if n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    raw = np.stack([r[0] for r in results])
    constrain = getattr(model, "constrain_draws", None)
    draws = constrain(raw) if constrain is not None else raw
    names = list(getattr(model, "names", None) or [f"x[{k}]" for k in range(model.dim)])
    stats = {k: np.stack([r[1][k] for r in results]) for k in STAT_NAMES}
    stats["treedepth"] = stats["treedepth"].astype(int)
    stats["n_leapfrog"] = stats["n_leapfrog"].astype(int)
    stats["divergent"] = stats["divergent"].astype(bool)
    return DrawsStore(draws, names, stats,
                      step_size=np.array([r[2] for r in results]),
                      inv_mass=np.stack([r[3] for r in results]))
