import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from bablr.model import (
    BentLineModel,
    FixedEffects,
    LongitudinalDataset,
    ModelParameters,
    PriorConfig,
    ScaleParameters,
    SubjectEffects,
    SubjectRecord,
    bent_line_mean,
    log_likelihood,
    log_posterior_grad,
    log_prior,
    parameter_names,
    to_constrained,
    to_unconstrained,
)
from bablr.priors import Prior, prior_logpdf
from oracles import central_difference_ld, grad_mismatch, log_posterior_ld, random_dataset

VARIANTS = [(None, True), (None, False), (40.0, True), (40.0, False)]


def _config(bound, nc, **kw):
    return PriorConfig(cp_lower_bound=bound, noncentered=nc, **kw)


def _quiet_dataset(subjects, strict=True):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return LongitudinalDataset(subjects, strict=strict)


def _random_params(rng, n, bound=None):
    b30 = -math.exp(rng.normal(-1, 1))
    om0 = rng.normal(60, 5) if bound is None else bound + math.exp(rng.normal(2, 0.5))
    scales = ScaleParameters(*np.exp(rng.normal(-1, 0.5, 5)))
    b3i = -np.exp(rng.normal(-1, 1, n))
    omi = om0 + rng.normal(0, 3, n) if bound is None else bound + np.exp(rng.normal(2, 0.5, n))
    effects = SubjectEffects(rng.normal(0, 1, n), rng.normal(0, 0.1, n), b3i - b30, omi - om0)
    return ModelParameters(FixedEffects(rng.normal(), rng.normal(0, 0.1), b30, om0),
                           scales, effects)


class TestBentLineMean:
    def test_at_change_point_equals_beta1(self):
        assert bent_line_mean(2.0, 0.1, -0.2, 60, 60) == pytest.approx(2.0)

    def test_pre_change_hand_value(self):
        assert bent_line_mean(0.0, -0.0052, -0.0085, 10, 5) == pytest.approx(0.026)

    def test_post_change_hand_value(self):
        v = bent_line_mean(0.0015, -0.0045, -0.0028, 74.95, 80)
        assert v == pytest.approx(0.0015 + (-0.0073) * 5.05, abs=1e-12)
        assert v == pytest.approx(-0.035365, abs=1e-9)

    def test_vectorised_over_time(self):
        t = np.array([0.0, 10.0, 20.0])
        np.testing.assert_allclose(bent_line_mean(1.0, 0.5, -1.0, 10.0, t), [-4.0, 1.0, -4.0])

    @given(b1=st.floats(-100, 100), b2=st.floats(-100, 100), b3=st.floats(-100, 0),
           om=st.floats(-100, 100))
    @settings(max_examples=300, deadline=None)
    def test_no_jump_at_change_point(self, b1, b2, b3, om):
        # the gap across +-delta is the linear change plus any jump; the jump must vanish
        delta = 1e-9
        gap = (bent_line_mean(b1, b2, b3, om, om + delta)
               - bent_line_mean(b1, b2, b3, om, om - delta))
        assert abs(gap - (2 * b2 + b3) * delta) < 1e-7

    @given(b1=st.floats(-100, 100), b2=st.floats(-10, 10), b3=st.floats(-10, 0),
           om=st.floats(-100, 100))
    @settings(max_examples=300, deadline=None)
    def test_small_gap_for_realistic_slopes(self, b1, b2, b3, om):
        delta = 1e-9
        gap = (bent_line_mean(b1, b2, b3, om, om - delta)
               - bent_line_mean(b1, b2, b3, om, om + delta))
        assert abs(gap) < 1e-7


class TestDataset:
    def test_shapes(self):
        d = LongitudinalDataset([SubjectRecord("a", [0.0, 1.0, 2.0], [1.0, 2.0, 3.0]),
                                 SubjectRecord("b", [5.0, 6.0, 7.0], [0.0, 0.0, 0.0])])
        sid, t, y = d.flat()
        assert d.n_subjects == 2 and d.n_obs == 6
        assert sid.tolist() == [0, 0, 0, 1, 1, 1]
        assert d.subject("b").times[0] == 5.0

    def test_few_observations_warn(self):
        with pytest.warns(UserWarning, match="fewer than 3"):
            LongitudinalDataset([SubjectRecord("a", [0.0], [1.0])])

    @pytest.mark.parametrize("subjects,msg", [
        ([], "empty dataset"),
        ([("a", [0, 1, 2], [1, 2, 3]), ("a", [0, 1, 2], [1, 2, 3])], "unique"),
        ([("a", [0, 1, 2], [1, 2])], "differ in length"),
        ([("a", [0, 1, np.nan], [1, 2, 3])], "non-finite"),
        ([("a", [2, 1, 3], [1, 2, 3])], "nondecreasing"),
        ([("a", [], [])], "no observations"),
    ])
    def test_invalid(self, subjects, msg):
        with pytest.raises(ValueError, match=msg):
            LongitudinalDataset(subjects)

    def test_names_follow_index_map(self):
        assert parameter_names(["x", "y"])[9:] == [
            "u1[x]", "u1[y]", "u2[x]", "u2[y]", "u3[x]", "u3[y]", "u4[x]", "u4[y]"]


class TestPriorConfig:
    def test_defaults(self):
        c = PriorConfig()
        assert c.beta1_0 == Prior("normal", 0, 10)
        assert c.beta2_0 == Prior("normal", 0, 1)
        assert c.beta3_0 == Prior("half_normal", 0, 5)
        assert c.omega_0 == Prior("normal", 10, 10)
        assert c.sigma_u2 == Prior("half_cauchy", 0, 1)
        assert c.cp_lower_bound is None and c.noncentered

    def test_application(self):
        c = PriorConfig.application()
        assert c.omega_0 == Prior("normal", 70, 10)
        assert c.sigma_u2 == Prior("lognormal", 0, 0.2)
        assert c.cp_lower_bound == 40.0

    def test_nonzero_effect_location_rejected(self):
        with pytest.raises(ValueError, match="identifiable"):
            PriorConfig(u_loc=(0.0, 0.1, 0.0, 0.0))

    def test_lognormal_on_decrement_rejected(self):
        with pytest.raises(ValueError):
            PriorConfig(beta3_0=Prior("lognormal", 0, 1))

    def test_items_cover_every_setting(self):
        keys = [k for k, _ in PriorConfig().items()]
        assert len(keys) == 11 and "cp_lower_bound" in keys


class TestTransforms:
    def test_zero_scale_coordinate(self):
        z = np.zeros(9 + 4)
        params, logj = to_constrained(z, _config(None, False))
        assert params.scales.sigma_y == 1.0
        assert params.fixed.beta30 == -1.0
        assert logj == 0.0

    def test_lower_bound_at_zero(self):
        params, logj = to_constrained(np.zeros(9), _config(40.0, False), 0)
        assert params.fixed.omega0 == 41.0 and logj == 0.0

    def test_overflow_is_rejected(self):
        z = np.zeros(13)
        z[4] = 1000.0
        _, logj = to_constrained(z, PriorConfig())
        assert logj == -math.inf
        data = LongitudinalDataset([SubjectRecord("a", [0, 1, 2], [0, 1, 2])])
        lp, g = BentLineModel(data)(z)
        assert lp == -math.inf and np.all(np.isnan(g))

    @pytest.mark.parametrize("bound,nc", VARIANTS)
    def test_round_trip(self, bound, nc, rng):
        cfg = _config(bound, nc)
        for _ in range(50):
            p = _random_params(rng, 6, bound)
            back, _ = to_constrained(to_unconstrained(p, cfg), cfg)
            np.testing.assert_allclose(back.to_vector(), p.to_vector(), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("bound,nc", VARIANTS)
    def test_constraints_hold_everywhere(self, bound, nc, rng):
        cfg = _config(bound, nc)
        for _ in range(100):
            z = rng.normal(0, 3, 9 + 4 * 5)
            p, logj = to_constrained(z, cfg)
            if not math.isfinite(logj):
                continue
            b1, b2, b3, om = p.subject_parameters()
            assert np.all(b3 <= 0) and p.fixed.beta30 <= 0
            assert np.all(b2 + b3 <= b2)
            if bound is not None:
                assert np.all(om >= bound) and p.fixed.omega0 >= bound


class TestJacobianNormalisation:
    """exp(log density + log Jacobian) integrates to one over each coordinate."""

    @pytest.mark.parametrize("index,prior,name", [
        (4, Prior("half_cauchy", 0, 1), "sigma_y"),
        (5, Prior("half_normal", 0, 5), "sigma_u1"),
        (6, Prior("lognormal", 0, 0.2), "sigma_u2"),
        (2, Prior("half_normal", 0, 5), "beta3_0"),
    ])
    def test_population_coordinates(self, index, prior, name):
        cfg = PriorConfig(**{name: prior})
        lo, hi = cfg.support(name)
        z0 = np.zeros(9)

        def density(x):
            z = z0.copy()
            z[index] = x
            params, logj = to_constrained(z, cfg, 0)
            value = params.to_vector()[index]
            return math.exp(prior_logpdf(prior, value, lo, hi)[0] + logj)

        total, _ = integrate.quad(density, -40, 40, limit=400, epsabs=1e-11)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_lower_bounded_change_point(self):
        cfg = _config(40.0, True)
        prior = cfg.omega_0

        def density(x):
            z = np.zeros(9)
            z[3] = x
            params, logj = to_constrained(z, cfg, 0)
            return math.exp(prior_logpdf(prior, params.fixed.omega0, 40.0, math.inf)[0] + logj)

        total, _ = integrate.quad(density, -30, 10, limit=400, epsabs=1e-11)
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("bound,nc", VARIANTS)
    @pytest.mark.parametrize("effect", [0, 1, 2, 3])
    def test_subject_effect_coordinates(self, bound, nc, effect):
        # a single subject without observations: the model density in the
        # effect coordinate must be a normalised (truncated) normal
        data = LongitudinalDataset([SubjectRecord("a", [], [])], strict=False)
        cfg = _config(bound, nc)
        model = BentLineModel(data, cfg)
        z = np.array([0.1, -0.2, -1.0, 1.0 if bound else 50.0, 0.0,
                      -0.3, -0.5, -1.2, 1.1, 0.0, 0.0, 0.0, 0.0])
        k = 9 + effect
        p0 = to_constrained(z, cfg)[0]
        base = model.log_density(z)

        def rest(zz):
            # the density of every other coordinate, which does not depend on zz[k]
            p, logj = to_constrained(zz, cfg)
            b1, b2, b3, om = p.subject_parameters()
            s = p.scales
            f = p.fixed
            if effect == 0:
                term = stats.norm(0, s.sigma_u1).logpdf(p.effects.u1[0])
            elif effect == 1:
                term = stats.norm(0, s.sigma_u2).logpdf(p.effects.u2[0])
            elif effect == 2:
                term = stats.truncnorm(-np.inf, -f.beta30 / s.sigma_u3, f.beta30,
                                       s.sigma_u3).logpdf(b3[0])
            elif bound is None:
                term = stats.norm(0, s.sigma_u4).logpdf(p.effects.u4[0])
            else:
                term = stats.truncnorm((bound - f.omega0) / s.sigma_u4, np.inf, f.omega0,
                                       s.sigma_u4).logpdf(om[0])
            jac = _coordinate_log_jacobian(zz, p, effect, bound, nc)
            return model.log_density(zz) - term - jac

        offset = rest(z)
        assert p0.effects.u1.size == 1

        def density(x):
            zz = z.copy()
            zz[k] = x
            return math.exp(model.log_density(zz) - offset)

        grid = np.linspace(-40, 40, 8001)
        mode = float(grid[np.argmax([density(x) for x in grid])])
        total, _ = integrate.quad(density, -40, 40, points=[mode], limit=400, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-6)
        assert base == pytest.approx(model.log_density(z))


def _coordinate_log_jacobian(z, p, effect, bound, nc):
    e = z[9 + effect]
    s = p.scales
    if effect == 0:
        return math.log(s.sigma_u1) if nc else 0.0
    if effect == 1:
        return math.log(s.sigma_u2) if nc else 0.0
    if effect == 2:
        return e + (math.log(s.sigma_u3) if nc else 0.0)
    if bound is None:
        return math.log(s.sigma_u4) if nc else 0.0
    return e + (math.log(s.sigma_u4) if nc else 0.0)


class TestDensities:
    def test_log_prior_support_violation(self):
        p = ModelParameters(FixedEffects(0, 0, 0.1, 10), ScaleParameters(1, 1, 1, 1, 1),
                            SubjectEffects([], [], [], []))
        assert log_prior(p, PriorConfig()) == -math.inf

    def test_log_prior_rejects_positive_subject_decrement(self):
        p = ModelParameters(FixedEffects(0, 0, -0.1, 10), ScaleParameters(1, 1, 1, 1, 1),
                            SubjectEffects([0], [0], [0.5], [0]))
        assert log_prior(p, PriorConfig()) == -math.inf

    def _one_obs(self, y):
        params = ModelParameters(FixedEffects(1.0, 0.1, -0.2, 5.0),
                                 ScaleParameters(0.30, 1, 1, 1, 1),
                                 SubjectEffects([0], [0], [0], [0]))
        data = _quiet_dataset([SubjectRecord("a", [5.0], [y])])
        return log_likelihood(params, data)

    def test_log_likelihood_at_mean(self):
        expected = -math.log(0.30) - 0.5 * math.log(2 * math.pi)  # 0.2850343
        assert self._one_obs(1.0) == pytest.approx(expected, abs=1e-12)

    def test_log_likelihood_one_sigma_off(self):
        assert self._one_obs(1.3) == pytest.approx(self._one_obs(1.0) - 0.5, abs=1e-12)

    def test_log_likelihood_empty(self):
        params = ModelParameters(FixedEffects(0, 0, -1, 0), ScaleParameters(1, 1, 1, 1, 1),
                                 SubjectEffects([], [], [], []))
        assert log_likelihood(params, LongitudinalDataset([], strict=False)) == 0.0

    @pytest.mark.parametrize("bound,nc", VARIANTS)
    def test_posterior_is_sum_of_parts(self, bound, nc, rng):
        cfg = _config(bound, nc, sigma_u2=Prior("lognormal", 0, 0.2))
        data = random_dataset(rng)
        data = LongitudinalDataset([SubjectRecord(s.id, s.times + 45, s.outcomes)
                                    for s in data.subjects], strict=False)
        model = BentLineModel(data, cfg)
        for _ in range(20):
            z = rng.normal(0, 1, model.dim)
            params, logj = to_constrained(z, cfg)
            expected = log_likelihood(params, data) + log_prior(params, cfg) + logj
            assert model.log_density(z) == pytest.approx(expected, rel=1e-10, abs=1e-8)

    @pytest.mark.parametrize("bound,nc", VARIANTS)
    def test_backends_agree(self, bound, nc, rng):
        cfg = _config(bound, nc, sigma_y=Prior("half_student_t", 0, 5, df=3))
        data = random_dataset(rng)
        a = BentLineModel(data, cfg)
        b = BentLineModel(data, cfg, backend="numpy")
        for _ in range(30):
            z = rng.normal(0, 1.5, a.dim)
            la, ga = a(z)
            lb, gb = b(z)
            if not math.isfinite(lb):
                assert not math.isfinite(la)
                continue
            assert la == pytest.approx(lb, rel=1e-12, abs=1e-10)
            np.testing.assert_allclose(ga, gb, rtol=1e-11, atol=1e-11)

    def test_wrong_length_rejected(self):
        data = LongitudinalDataset([SubjectRecord("a", [0, 1, 2], [0, 1, 2])])
        with pytest.raises(ValueError):
            BentLineModel(data)(np.zeros(5))


class TestGradient:
    @pytest.mark.parametrize("bound,nc", VARIANTS)
    def test_matches_extended_precision_differences(self, bound, nc, rng):
        cfg = _config(None if bound is None else -20.0, nc)
        for _ in range(10):
            data = random_dataset(rng)
            model = BentLineModel(data, cfg)
            z = rng.normal(0, 1, model.dim)
            lp, g = model(z)
            assert math.isfinite(lp)
            ref = central_difference_ld(lambda x: log_posterior_ld(x, data, cfg), z)
            assert grad_mismatch(g, ref) < 1.0

    def test_no_observations_gives_prior_gradient(self, rng):
        cfg = PriorConfig()
        data = LongitudinalDataset([SubjectRecord("a", [], []), SubjectRecord("b", [], [])],
                                   strict=False)
        model = BentLineModel(data, cfg)
        z = rng.normal(0, 1, model.dim)
        lp, g = model(z)
        params, logj = to_constrained(z, cfg)
        assert lp == pytest.approx(log_prior(params, cfg) + logj)
        ref = central_difference_ld(lambda x: log_posterior_ld(x, data, cfg), z)
        assert grad_mismatch(g, ref) < 1.0

    def test_tie_at_change_point_uses_pre_branch(self):
        cfg = PriorConfig(noncentered=False)
        data = _quiet_dataset([SubjectRecord("a", [10.0], [0.7])])
        # omega_0 = 10, u4 = 0, so the observation sits exactly on the change point
        z = np.array([0.2, 0.5, math.log(3.0), 10.0, 0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0])
        lp, g = BentLineModel(data, cfg)(z)
        assert math.isfinite(lp) and np.all(np.isfinite(g))
        f = lambda x: log_posterior_ld(x, data, cfg)
        # raising omega keeps t <= omega, the pre-change side
        h = 1e-7
        zp = z.astype(np.longdouble)
        zp[12] += np.longdouble(h)
        right = float((f(zp) - f(z.astype(np.longdouble))) / np.longdouble(h))
        zm = z.astype(np.longdouble)
        zm[12] -= np.longdouble(h)
        left = float((f(z.astype(np.longdouble)) - f(zm)) / np.longdouble(h))
        assert g[12] == pytest.approx(right, abs=1e-5)
        assert abs(right - left) > 0.1  # the two sides really differ

    def test_functional_form(self):
        data = LongitudinalDataset([SubjectRecord("a", [0, 1, 2], [0, 1, 2])])
        z = np.zeros(13)
        assert log_posterior_grad(z, data)[0] == BentLineModel(data)(z)[0]

    def test_model_pickles(self):
        import pickle

        data = LongitudinalDataset([SubjectRecord("a", [0, 1, 2], [0, 1, 2])])
        m = pickle.loads(pickle.dumps(BentLineModel(data, backend="numpy")))
        assert math.isfinite(m(np.zeros(13))[0])
