import math

import numpy as np
import pytest
from scipy import integrate as sci_integrate

from aftid.data import Dataset, Observation
from aftid.errors import DomainError, NegativeIncrement
from aftid.frailty import (
    EStepState,
    maximize_sigma,
    posterior_mean,
    posterior_mean_log,
    sigma_loglik,
    total_cumulative_hazard,
    update_estep,
)

EULER_GAMMA = 0.5772156649015329


class AnalyticModel:
    """Fitted-model stand-in with closed-form cumulative hazards."""

    def __init__(self, h01, h02, h12, sigma=1.0, p=1):
        self._fns = {"01": h01, "02": h02, "12": h12}
        self.sigma_ = sigma
        self.coefs_ = {jk: np.zeros(p) for jk in ("01", "02", "12")}
        self.features_ = {jk: np.arange(p) for jk in ("01", "02", "12")}

    def cumulative_hazard(self, transition, times):
        return self._fns[transition](np.asarray(times, dtype=float))


def gamma_posterior_moments(d, sigma, h_total):
    """Oracle: numerically integrate the unnormalized gamma posterior on log scale.

    The integrand exp(shape*u - rate*e^u) peaks at u = log(shape/rate); the
    subdivision hints keep the adaptive rule from overlooking a narrow peak on
    the wide interval.
    """
    shape = d + 1.0 / sigma
    rate = 1.0 / sigma + h_total

    def weight(u):
        return np.exp(shape * u - rate * np.exp(u))

    mode = math.log(shape / rate)
    pts = sorted({-60.0, -30.0, -10.0, -3.0, 0.0, 3.0, mode - 2.0, mode, mode + 2.0})
    kw = {"limit": 300, "points": pts}
    norm, _ = sci_integrate.quad(weight, -120.0, 12.0, **kw)
    mean, _ = sci_integrate.quad(lambda u: np.exp(u) * weight(u), -120.0, 12.0, **kw)
    logm, _ = sci_integrate.quad(lambda u: u * weight(u), -120.0, 12.0, **kw)
    return mean / norm, logm / norm


class TestTotalCumulativeHazard:
    def test_quadratic_hazards_censored_subject(self):
        model = AnalyticModel(lambda t: t**2, lambda t: t**2, lambda t: t)
        obs = Observation(v=1.0, w=0.0, delta1=0, delta2=0, delta3=0, x=(0.0,))
        assert total_cumulative_hazard(obs, model) == pytest.approx(2.0, abs=1e-12)

    def test_diagnosed_subject_adds_truncation_increment(self):
        model = AnalyticModel(lambda t: t**2, lambda t: t**2, lambda t: t)
        obs = Observation(v=1.0, w=2.0, delta1=1, delta2=0, delta3=0, x=(0.0,))
        assert total_cumulative_hazard(obs, model) == pytest.approx(3.0, abs=1e-12)

    def test_vanishes_at_time_zero_limit(self):
        model = AnalyticModel(lambda t: t**2, lambda t: t**2, lambda t: t)
        obs = Observation(v=1e-9, w=0.0, delta1=0, delta2=0, delta3=0, x=(0.0,))
        assert total_cumulative_hazard(obs, model) == pytest.approx(0.0, abs=1e-12)

    def test_negative_increment_raises(self):
        model = AnalyticModel(lambda t: t, lambda t: t, lambda t: -t)  # decreasing: broken
        obs = Observation(v=1.0, w=2.0, delta1=1, delta2=0, delta3=1, x=(0.0,))
        with pytest.raises(NegativeIncrement):
            total_cumulative_hazard(obs, model)


class TestPosteriorMoments:
    def test_prior_mean_when_nothing_observed(self):
        assert posterior_mean(0, 2.0, 0.0) == pytest.approx(1.0)

    def test_one_event(self):
        assert posterior_mean(1, 2.0, 0.5) == pytest.approx(1.5)

    def test_degenerate_frailty_limit(self):
        for d in range(4):
            assert posterior_mean(d, 1e-8, 1.0) == pytest.approx(1.0, abs=1e-6)

    def test_log_moment_reference_values(self):
        assert posterior_mean_log(0, 1.0, 0.0) == pytest.approx(-EULER_GAMMA, abs=1e-9)
        assert posterior_mean_log(1, 1.0, 0.0) == pytest.approx(1.0 - EULER_GAMMA, abs=1e-9)

    def test_jensen_inequality(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = rng.integers(0, 4)
            sigma = rng.uniform(0.1, 5.0)
            h = rng.uniform(0.0, 10.0)
            assert posterior_mean_log(d, sigma, h) <= math.log(posterior_mean(d, sigma, h))

    def test_monotone_in_events_and_hazard(self):
        sig = 0.8
        grid_d = np.arange(0, 4)
        grid_h = np.linspace(0.0, 8.0, 9)
        for h in grid_h:
            vals = [posterior_mean(d, sig, h) for d in grid_d]
            assert np.all(np.diff(vals) > 0)
        for d in grid_d:
            vals = [posterior_mean(d, sig, h) for h in grid_h]
            assert np.all(np.diff(vals) < 0)

    def test_moments_match_quadrature_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            d = int(rng.integers(0, 4))
            sigma = float(rng.uniform(0.1, 5.0))
            h = float(rng.uniform(0.0, 10.0))
            mean_oracle, log_oracle = gamma_posterior_moments(d, sigma, h)
            assert posterior_mean(d, sigma, h) == pytest.approx(mean_oracle, abs=1e-6)
            assert posterior_mean_log(d, sigma, h) == pytest.approx(log_oracle, abs=1e-6)

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            posterior_mean(1, 0.0, 1.0)
        with pytest.raises(DomainError):
            posterior_mean_log(1, -1.0, 1.0)


class TestSigmaLoglik:
    def test_single_subject_reference(self):
        state = EStepState(gamma_mean=np.array([1.0]), gamma_log_mean=np.array([0.0]))
        assert sigma_loglik(1.0, np.array([0.0]), state) == pytest.approx(-1.0)
        assert sigma_loglik(1.0, np.array([1.0]), state) == pytest.approx(-1.0)

    def test_subject_permutation_invariance(self):
        rng = np.random.default_rng(3)
        d = rng.integers(0, 3, size=20).astype(float)
        e1 = rng.uniform(0.2, 2.0, size=20)
        e2 = np.log(e1) - rng.uniform(0.0, 0.5, size=20)
        state = EStepState(gamma_mean=e1, gamma_log_mean=e2)
        perm = rng.permutation(20)
        state_p = EStepState(gamma_mean=e1[perm], gamma_log_mean=e2[perm])
        assert sigma_loglik(0.7, d, state) == pytest.approx(
            sigma_loglik(0.7, d[perm], state_p), abs=1e-12
        )

    def test_maximizer_matches_dense_grid(self):
        rng = np.random.default_rng(8)
        n = 80
        d = rng.integers(0, 3, size=n).astype(float)
        e1 = rng.uniform(0.3, 2.5, size=n)
        e2 = np.log(e1) - rng.uniform(0.05, 0.6, size=n)
        state = EStepState(gamma_mean=e1, gamma_log_mean=e2)
        grid = np.exp(np.arange(math.log(0.05), math.log(20.0), 1e-4))
        vals = [sigma_loglik(s, d, state) for s in grid]
        best = grid[int(np.argmax(vals))]
        found = maximize_sigma(d, state, tol=1e-8)
        assert found == pytest.approx(best, rel=2e-3)


class TestUpdateEstep:
    @staticmethod
    def _model_and_data():
        model = AnalyticModel(lambda t: t**2, lambda t: 1.5 * t**2, lambda t: t**2, sigma=0.8)
        obs = [
            Observation(v=0.5, w=0.0, delta1=0, delta2=0, delta3=0, x=(0.0,)),
            Observation(v=0.4, w=0.9, delta1=1, delta2=0, delta3=1, x=(0.0,)),
            Observation(v=0.8, w=0.0, delta1=0, delta2=1, delta3=0, x=(0.0,)),
        ]
        return model, Dataset.from_observations(obs)

    def test_composition_of_pieces(self):
        model, data = self._model_and_data()
        state = update_estep(data, model)
        d = (data.delta1 + data.delta2 + data.delta3).astype(float)
        for i in range(data.n):
            h = total_cumulative_hazard(list(data.observations())[i], model)
            assert state.gamma_mean[i] == pytest.approx(posterior_mean(d[i], 0.8, h))
            assert state.gamma_log_mean[i] == pytest.approx(posterior_mean_log(d[i], 0.8, h))

    def test_degenerate_frailty_gives_unit_means(self):
        model, data = self._model_and_data()
        model.sigma_ = 1e-8
        state = update_estep(data, model)
        np.testing.assert_allclose(state.gamma_mean, 1.0, atol=1e-6)

    def test_single_censored_subject_prior_moments(self):
        model = AnalyticModel(lambda t: 0.0 * t, lambda t: 0.0 * t, lambda t: 0.0 * t, sigma=1.0)
        data = Dataset.from_observations(
            [Observation(v=1.0, w=0.0, delta1=0, delta2=0, delta3=0, x=(0.0,))]
        )
        state = update_estep(data, model)
        assert state.gamma_mean[0] == pytest.approx(1.0)
        assert state.gamma_log_mean[0] == pytest.approx(-EULER_GAMMA, abs=1e-9)


def test_estep_state_validates_jensen():
    with pytest.raises(DomainError):
        EStepState(gamma_mean=np.array([1.0]), gamma_log_mean=np.array([0.5]))
    with pytest.raises(DomainError):
        EStepState(gamma_mean=np.array([-1.0]), gamma_log_mean=np.array([-2.0]))
