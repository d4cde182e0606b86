import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from bablr.adaptation import (
    DualAveraging,
    WindowedAdaptation,
    adapt_mass,
    adapt_step_size,
    regularized_variance,
)
from bablr.diagnostics import mcse_mean, split_rhat
from bablr.model import BentLineModel, PriorConfig
from bablr.nuts import find_reasonable_step_size, nuts_transition
from bablr.sampler import DrawsStore, InitializationError, SamplerConfig, run_chains
from bablr.simulate import SIM1_TRUTH, simulate_dataset


class Gaussian:
    """Diagonal Gaussian target with known moments."""

    def __init__(self, sd):
        self.sd = np.asarray(sd, dtype=float)
        self.dim = self.sd.size

    def __call__(self, z):
        r = z / self.sd
        return -0.5 * float(r @ r), -r / self.sd


class DoubleWell:
    dim = 1

    @staticmethod
    def logp(x):
        return -2.0 * (x * x - 1.0) ** 2

    def __call__(self, z):
        x = z[0]
        return self.logp(x), np.array([-8.0 * x * (x * x - 1.0)])


class HalfLine:
    """Standard normal restricted to x > 0: exercises rejection at the boundary."""

    dim = 1

    def __call__(self, z):
        if z[0] <= 0:
            return -math.inf, np.array([np.nan])
        return -0.5 * z[0] ** 2, -z.copy()


def _adapted_draws(target, n, seed, warmup=1000):
    store = run_chains(target, SamplerConfig(chains=1, warmup=warmup, samples=n, seed=seed),
                       n_jobs=1)
    return store.draws[0]


class TestTransition:
    def test_standard_normal_mean(self):
        x = _adapted_draws(Gaussian([1.0]), 4000, seed=1)[:, 0]
        assert abs(x.mean()) < 3 * mcse_mean(x[None, :])

    def test_anisotropic_sds(self):
        x = _adapted_draws(Gaussian([1.0, 10.0]), 4000, seed=2)
        np.testing.assert_allclose(x.std(axis=0, ddof=1), [1.0, 10.0], rtol=0.10)

    def test_depth_zero_returns_start(self, rng):
        z0 = np.array([0.3, -0.7])
        z, st = nuts_transition(z0, Gaussian([1, 1]), 0.5, np.ones(2), 0, rng)
        np.testing.assert_array_equal(z, z0)
        assert st.n_leapfrog == 0 and st.treedepth == 0

    def test_rejects_bad_start(self, rng):
        with pytest.raises(ValueError, match="not finite"):
            nuts_transition(np.array([-1.0]), HalfLine(), 0.1, np.ones(1), 5, rng)

    @pytest.mark.parametrize("step,mass", [(0.0, [1.0]), (-1.0, [1.0]), (0.1, [0.0])])
    def test_rejects_bad_settings(self, step, mass, rng):
        with pytest.raises(ValueError):
            nuts_transition(np.zeros(1), Gaussian([1]), step, np.array(mass), 5, rng)

    def test_huge_step_flags_divergence(self, rng):
        _, st = nuts_transition(np.array([0.5]), DoubleWell(), 50.0, np.ones(1), 5, rng)
        assert st.divergent

    def test_double_well_histogram(self):
        # detailed balance smoke test against the quadrature-normalised density
        x = _adapted_draws(DoubleWell(), 20000, seed=3)[:, 0]
        edges = np.linspace(-2.2, 2.2, 51)
        z, _ = integrate.quad(lambda v: math.exp(DoubleWell.logp(v)), -np.inf, np.inf)
        mass = np.array([integrate.quad(lambda v: math.exp(DoubleWell.logp(v)), a, b)[0]
                         for a, b in zip(edges[:-1], edges[1:])]) / z
        counts, _ = np.histogram(x, edges)
        tv = 0.5 * np.abs(counts / x.size - mass).sum() + 0.5 * (1 - mass.sum())
        assert tv < 0.05

    def test_boundary_rejections_are_not_errors(self):
        x = _adapted_draws(HalfLine(), 2000, seed=4, warmup=300)[:, 0]
        assert np.all(x > 0)
        assert x.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.1)

    def test_reasonable_step_size_scales_with_target(self, rng):
        small = find_reasonable_step_size(np.zeros(1), Gaussian([0.01]), 1.0, np.ones(1), rng)
        large = find_reasonable_step_size(np.zeros(1), Gaussian([100.0]), 1.0, np.ones(1), rng)
        assert small < 0.1 < 10 < large


class TestDualAveraging:
    def test_target_acceptance_is_stationary(self):
        da = DualAveraging(0.5, 0.8)
        steps = [da.update(0.8) for _ in range(50)]
        assert np.allclose(steps, steps[0])

    def test_full_acceptance_grows(self):
        da = DualAveraging(0.5, 0.8)
        steps = [da.update(1.0) for _ in range(100)]
        assert np.all(np.diff(steps) > 0)

    def test_zero_acceptance_shrinks(self):
        da = DualAveraging(0.5, 0.8)
        steps = [da.update(0.0) for _ in range(100)]
        assert np.all(np.diff(steps) < 0)

    def test_function_form(self):
        assert adapt_step_size([1.0] * 10) > adapt_step_size([0.0] * 10)
        with pytest.raises(ValueError):
            adapt_step_size([])

    def test_converges_on_gaussian(self):
        # the averaged step is slightly conservative, so realised acceptance
        # sits a little above the target
        store = run_chains(Gaussian(np.ones(10)), SamplerConfig(chains=1, warmup=500,
                                                                samples=500, seed=9), n_jobs=1)
        assert 0.75 < store.stats["accept_stat"].mean() < 0.97


class TestMassAdaptation:
    def test_large_sample_variance(self, rng):
        inv = adapt_mass(rng.normal(0, 2, size=(5000, 3)))
        np.testing.assert_allclose(inv, 4.0, rtol=0.2)

    def test_unit_variance(self, rng):
        np.testing.assert_allclose(adapt_mass(rng.normal(size=(2000, 4))), 1.0, rtol=0.2)

    def test_two_identical_draws_stay_positive(self):
        inv = adapt_mass(np.ones((2, 3)))
        assert np.all(inv > 0)
        np.testing.assert_allclose(inv, regularized_variance(np.zeros(3), 2))

    def test_single_draw_rejected(self):
        with pytest.raises(ValueError):
            adapt_mass(np.ones((1, 3)))

    def test_window_schedule(self):
        w = WindowedAdaptation(1000, 2)
        ends = [k for k in range(1000) if w.add(np.zeros(2)) is not None]
        assert ends == [99, 149, 249, 449, 949]

    def test_short_warmup_rejected(self):
        with pytest.raises(ValueError):
            WindowedAdaptation(100, 2)


class TestRunChains:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(warmup=100)
        with pytest.raises(ValueError):
            SamplerConfig(target_accept=1.0)
        assert SamplerConfig(warmup=10, adapt=False).warmup == 10

    def test_deterministic(self):
        cfg = SamplerConfig(chains=2, warmup=150, samples=50, seed=11)
        a = run_chains(Gaussian([1, 2, 3]), cfg, n_jobs=1)
        b = run_chains(Gaussian([1, 2, 3]), cfg, n_jobs=1)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_independent_of_worker_count(self):
        cfg = SamplerConfig(chains=2, warmup=150, samples=50, seed=12)
        a = run_chains(Gaussian([1, 2]), cfg, n_jobs=1)
        b = run_chains(Gaussian([1, 2]), cfg, n_jobs=2)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.stats["n_leapfrog"], b.stats["n_leapfrog"])

    def test_seeds_differ(self):
        a = run_chains(Gaussian([1]), SamplerConfig(chains=1, warmup=150, samples=20, seed=1))
        b = run_chains(Gaussian([1]), SamplerConfig(chains=1, warmup=150, samples=20, seed=2))
        assert not np.array_equal(a.draws, b.draws)

    def test_single_chain_shape(self):
        store = run_chains(Gaussian([1, 1]), SamplerConfig(chains=1, warmup=150, samples=40))
        assert store.draws.shape == (1, 40, 2)
        assert math.isfinite(split_rhat(store.draws[:, :, 0]))
        assert set(store.stats) >= {"divergent", "treedepth", "accept_stat", "energy"}

    def test_ten_dimensional_normal(self):
        store = run_chains(Gaussian(np.ones(10)), SamplerConfig(chains=4, warmup=1000,
                                                                samples=1000, seed=5),
                           n_jobs=1)
        assert max(split_rhat(store.draws[:, :, k]) for k in range(10)) < 1.01

    def test_initialization_failure(self):
        class Nowhere:
            dim = 2

            def __call__(self, z):
                return -math.inf, np.full(2, np.nan)

        with pytest.raises(InitializationError):
            run_chains(Nowhere(), SamplerConfig(chains=1, warmup=150, samples=10))

    def test_store_accessors(self):
        store = DrawsStore(np.arange(12.0).reshape(1, 4, 3), ["a", "u1[x]", "u1[y]"])
        assert store["a"].shape == (1, 4)
        assert store.subject_ids() == ["x", "y"]
        assert store.divergences() == 0
        with pytest.raises(KeyError):
            store.index("b")
        with pytest.raises(ValueError):
            DrawsStore(np.full((1, 2, 1), np.nan), ["a"])


class TestOnModel:
    def test_higher_target_accept_does_not_add_divergences(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data, _ = simulate_dataset(SIM1_TRUTH, 25, seed=4)
        model = BentLineModel(data, PriorConfig(noncentered=False))
        counts = []
        for delta in (0.8, 0.99):
            cfg = SamplerConfig(chains=1, warmup=200, samples=200, seed=21, target_accept=delta)
            counts.append(run_chains(model, cfg, n_jobs=1).divergences())
        assert counts[1] <= counts[0]

    def test_draws_respect_constraints(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data, _ = simulate_dataset(SIM1_TRUTH, 15, seed=5)
        model = BentLineModel(data, PriorConfig.application(
            omega_0=PriorConfig().omega_0, cp_lower_bound=-30.0))
        store = run_chains(model, SamplerConfig(chains=1, warmup=150, samples=100, seed=2))
        for sid in store.subject_ids():
            b3 = store.flat("beta3_0") + store.flat(f"u3[{sid}]")
            om = store.flat("omega_0") + store.flat(f"u4[{sid}]")
            assert np.all(b3 <= 0) and np.all(om >= -30.0)
        assert np.all(store.flat("beta3_0") <= 0)
