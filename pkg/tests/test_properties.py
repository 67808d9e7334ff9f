"""Standalone invariance and consistency properties (no replicate studies).

These hold on any dataset the model accepts; they are checked on small
simulated samples so the whole module runs in seconds.
"""

import numpy as np
import pytest

from aftid import simulate
from aftid.bootstrap import weighted_fit
from aftid.data import Dataset
from aftid.emfit import FitConfig, fit, fit_no_frailty
from aftid.gof import marginal_survival_12, marginal_survival_state0, rsp
from aftid.simulate import true_model
from aftid.smoothing import estimate_hazard, profile_loglik, select_bandwidths

CFG = FitConfig(check_identifiability=False)
TRANSITIONS = ("01", "02", "12")


@pytest.fixture(scope="module")
def setting():
    sc = simulate.paper_scenario(sigma=0.5, n=100, seed=61)
    data = simulate.simulate_dataset(sc, 0).dataset
    feats = {jk: sc.feature_names(jk) for jk in TRANSITIONS}
    return sc, data, feats


@pytest.fixture(scope="module")
def no_frailty_fit(setting):
    _, data, feats = setting
    return fit_no_frailty(data, CFG, features=feats)


class TestTimeScaling:
    def test_profile_argmax_invariant(self, setting):
        _, data, _ = setting
        c = 4.2
        scaled = Dataset(
            v=c * data.v, w=c * data.w, delta1=data.delta1, delta2=data.delta2,
            delta3=data.delta3, x=data.x, covariate_names=data.covariate_names,
        )
        e1 = np.ones(data.n)
        grid = [np.array([b, 0.4, 0.0, 0.0]) for b in np.linspace(-0.5, 2.0, 11)]
        vals = [profile_loglik(b, "01", data, e1, 0.3, cum_bandwidth=0.2) for b in grid]
        vals_scaled = [profile_loglik(b, "01", scaled, e1, 0.3, cum_bandwidth=0.2) for b in grid]
        diffs = np.asarray(vals_scaled) - np.asarray(vals)
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-9)
        assert int(np.argmax(vals)) == int(np.argmax(vals_scaled))

    def test_refit_on_scaled_times(self, setting, no_frailty_fit):
        _, data, feats = setting
        c = 2.0
        scaled = Dataset(
            v=c * data.v, w=c * data.w, delta1=data.delta1, delta2=data.delta2,
            delta3=data.delta3, x=data.x, covariate_names=data.covariate_names,
        )
        refit = fit_no_frailty(scaled, CFG, features=feats)
        for jk in TRANSITIONS:
            np.testing.assert_allclose(refit.coefs_[jk], no_frailty_fit.coefs_[jk], atol=1e-3)
        t = np.linspace(0.3, 1.5, 9)
        np.testing.assert_allclose(
            refit.cumulative_hazard("02", c * t),
            no_frailty_fit.cumulative_hazard("02", t),
            atol=2e-3,
        )


class TestCovariateTranslation:
    def test_profile_values_identical(self, setting):
        _, data, _ = setting
        shifted = Dataset(
            v=data.v, w=data.w, delta1=data.delta1, delta2=data.delta2,
            delta3=data.delta3, x=data.x - 3.0, covariate_names=data.covariate_names,
        )
        e1 = np.linspace(0.5, 1.5, data.n)
        beta = np.array([0.5, -0.3, 0.2, 0.1])
        for jk in TRANSITIONS:
            a = profile_loglik(beta, jk, data, e1, 0.35, cum_bandwidth=0.2)
            b = profile_loglik(beta, jk, shifted, e1, 0.35, cum_bandwidth=0.2)
            assert b == pytest.approx(a, abs=1e-9)


class TestHazardShape:
    def test_nonnegative_and_monotone(self, setting):
        _, data, _ = setting
        bws = select_bandwidths(data)
        e1 = np.linspace(0.6, 1.4, data.n)
        for jk in TRANSITIONS:
            a_den, a_cum = bws.for_hazard(jk)
            hz = estimate_hazard(
                np.zeros(data.p), jk, data, e1, a_den, cum_bandwidth=a_cum
            )
            assert hz.cumulative(0.0) == 0.0
            assert np.all(np.diff(hz.grid_cumulative) >= 0.0)
            t = np.linspace(hz.t_min, hz.t_max, 41)
            assert np.all(hz.hazard(t) >= 0.0)


class TestWeightEquivalence:
    def test_unit_weights_identical_fit(self, setting, no_frailty_fit):
        _, data, feats = setting
        weighted = weighted_fit(data, np.ones(data.n), CFG, features=feats, frailty=False)
        for jk in TRANSITIONS:
            np.testing.assert_array_equal(weighted.coefs_[jk], no_frailty_fit.coefs_[jk])
            np.testing.assert_array_equal(
                weighted.hazards_[jk].grid_cumulative,
                no_frailty_fit.hazards_[jk].grid_cumulative,
            )

    def test_unit_weights_identical_frailty_fit(self, setting):
        _, data, feats = setting
        cfg = FitConfig(check_identifiability=False, max_iterations=25)
        plain = fit(data, cfg, features=feats)
        weighted = weighted_fit(data, np.ones(data.n), cfg, features=feats, frailty=True)
        assert weighted.sigma_ == plain.sigma_
        for jk in TRANSITIONS:
            np.testing.assert_array_equal(weighted.coefs_[jk], plain.coefs_[jk])


class TestFrailtyLimit:
    def test_marginal_survivals_converge_to_exponential_forms(self):
        sc_small = simulate.paper_scenario(sigma=1e-6, n=10, seed=1)
        sc_none = simulate.paper_scenario(sigma=None, n=10, seed=1)
        lo, none = true_model(sc_small), true_model(sc_none)
        x = np.array([0.3, 1.0, -0.2, 0.5])
        grid = np.linspace(0.05, 1.4, 40)
        s_lo = np.array([marginal_survival_state0(t, x, lo) for t in grid])
        s_none = np.array([marginal_survival_state0(t, x, none) for t in grid])
        assert np.max(np.abs(s_lo - s_none)) <= 1e-3
        s12_lo = np.array([marginal_survival_12(t, 0.4, x, lo) for t in grid if t >= 0.4])
        s12_none = np.array([marginal_survival_12(t, 0.4, x, none) for t in grid if t >= 0.4])
        assert np.max(np.abs(s12_lo - s12_none)) <= 1e-3

    def test_estep_degenerates_to_unit_means(self, setting, no_frailty_fit):
        from aftid.frailty import update_estep

        _, data, _ = setting
        model = no_frailty_fit
        model.sigma_ = 1e-8
        try:
            state = update_estep(data, model)
        finally:
            model.sigma_ = None
        np.testing.assert_allclose(state.gamma_mean, 1.0, atol=1e-6)


class TestRspBasics:
    def test_rsp_bounds_and_event_stability(self, setting, no_frailty_fit):
        _, data, _ = setting
        s1 = rsp(data, no_frailty_fit, u_seed=1)
        s2 = rsp(data, no_frailty_fit, u_seed=2)
        for s in (s1, s2):
            assert np.all((s.rsp0 >= 0) & (s.rsp0 <= 1))
            assert np.all((s.rsp12 >= 0) & (s.rsp12 <= 1))
        events = (data.delta1 + data.delta2) == 1
        np.testing.assert_array_equal(s1.rsp0[events], s2.rsp0[events])

    def test_survival_monotone_grid(self, setting, no_frailty_fit):
        _, data, _ = setting
        x = data.x[0]
        grid = np.linspace(0.0, 2.0, 25)
        vals = np.array([marginal_survival_state0(t, x, no_frailty_fit) for t in grid])
        assert vals[0] == pytest.approx(1.0)
        assert np.all(np.diff(vals) <= 1e-12)


class TestTraceConsistency:
    def test_trace_matches_iterations_and_flags(self, setting):
        _, data, feats = setting
        cfg = FitConfig(check_identifiability=False, max_iterations=12)
        res = fit(data, cfg, features=feats)
        assert len(res.trace_) == res.n_iter_ <= 12
        if res.converged_:
            rec = res.trace_[-1]
            assert rec["max_dbeta"] < cfg.tol_beta
            assert rec["dsigma"] < cfg.tol_sigma
            assert all(v < cfg.tol_hazard for v in rec["mean_dhazard"].values())
