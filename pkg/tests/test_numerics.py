import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sci_integrate

from aftid import numerics
from aftid.errors import DomainError, NonFiniteObjective
from aftid.numerics import (
    EPANECHNIKOV,
    GAUSSIAN,
    QuadratureConfig,
    central_difference_gradient,
    digamma,
    integrate,
    kernel_cdf,
    kernel_density,
    log_gamma,
    maximize_multivariate,
    maximize_scalar,
)

EULER_GAMMA = 0.5772156649015329


class TestSpecialFunctions:
    def test_log_gamma_integers(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-12)
        assert log_gamma(5.0) == pytest.approx(math.log(24.0), abs=1e-12)

    def test_log_gamma_half(self):
        assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), abs=1e-12)

    def test_log_gamma_domain(self):
        with pytest.raises(DomainError):
            log_gamma(0.0)
        with pytest.raises(DomainError):
            log_gamma(-3.0)

    def test_digamma_reference_values(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-10)
        assert digamma(2.0) == pytest.approx(1.0 - EULER_GAMMA, abs=1e-10)
        assert digamma(0.5) == pytest.approx(-EULER_GAMMA - 2.0 * math.log(2.0), abs=1e-10)

    def test_digamma_domain(self):
        with pytest.raises(DomainError):
            digamma(-1.0)

    @given(st.sampled_from([0.1, 0.5, 1.0, 3.0, 10.0]))
    def test_digamma_recurrence(self, x):
        assert digamma(x + 1.0) - digamma(x) == pytest.approx(1.0 / x, abs=1e-9)


class TestKernels:
    def test_gaussian_values(self):
        assert kernel_density(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-12)
        assert kernel_cdf(0.0) == pytest.approx(0.5, abs=1e-12)
        assert kernel_cdf(1.96) == pytest.approx(0.9750021048517795, abs=1e-10)

    @given(st.floats(-6.0, 6.0))
    @settings(max_examples=60)
    def test_cdf_symmetry(self, u):
        assert kernel_cdf(u) + kernel_cdf(-u) == pytest.approx(1.0, abs=1e-12)

    def test_cdf_monotone(self):
        u = np.linspace(-8, 8, 400)
        assert np.all(np.diff(kernel_cdf(u)) >= 0.0)

    def test_epanechnikov_consistency(self):
        u = np.linspace(-1.5, 1.5, 101)
        dens = EPANECHNIKOV.density(u)
        assert np.all(dens >= 0.0)
        # cdf is the integral of the density
        approx = sci_integrate.cumulative_trapezoid(dens, u, initial=0.0)
        np.testing.assert_allclose(EPANECHNIKOV.cdf(u), approx, atol=2e-4)

    def test_gradient_matches_finite_difference(self):
        for kern in (GAUSSIAN, EPANECHNIKOV):
            u = np.linspace(-0.9, 0.9, 7)
            h = 1e-6
            fd = (kern.density(u + h) - kern.density(u - h)) / (2 * h)
            np.testing.assert_allclose(kern.density_gradient(u), fd, atol=1e-8)


class TestIntegrate:
    def test_polynomial_exact(self):
        assert integrate(lambda t: 2.0 * t, 0.0, 1.0) == pytest.approx(1.0, abs=1e-10)

    def test_zero_function(self):
        assert integrate(lambda t: 0.0 * t, 0.0, 5.0) == 0.0

    def test_normal_density_normalizes(self):
        val = integrate(kernel_density, -8.0, 8.0)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_interval_additivity(self):
        f = lambda t: np.exp(-t) * np.sin(3 * t) ** 2  # noqa: E731
        whole = integrate(f, 0.0, 2.0)
        split = integrate(f, 0.0, 0.7) + integrate(f, 0.7, 2.0)
        assert whole == pytest.approx(split, abs=2e-8)

    def test_scalar_only_callable(self):
        assert integrate(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-8)

    def test_agrees_with_quadpack(self):
        f = lambda t: np.sqrt(np.abs(t - 0.3)) * np.exp(-t)  # noqa: E731
        ref, _ = sci_integrate.quad(f, 0.0, 2.0, epsabs=1e-12, limit=200)
        assert integrate(f, 0.0, 2.0) == pytest.approx(ref, abs=1e-7)

    def test_empty_interval(self):
        assert integrate(lambda t: t, 1.0, 1.0) == 0.0

    def test_reversed_interval_rejected(self):
        with pytest.raises(DomainError):
            integrate(lambda t: t, 1.0, 0.0)

    def test_deterministic(self):
        f = lambda t: np.exp(-t * t)  # noqa: E731
        assert integrate(f, -3.0, 3.0) == integrate(f, -3.0, 3.0)


class TestMaximizeScalar:
    def test_parabola(self):
        x, val = maximize_scalar(lambda t: -((t - 2.0) ** 2), 0.0, 10.0, tol=1e-8)
        assert x == pytest.approx(2.0, abs=1e-6)

    def test_returns_value(self):
        x, val = maximize_scalar(lambda t: -((t - 0.5) ** 2) - 1.0, 0.0, 1.0, tol=1e-8)
        assert x == pytest.approx(0.5, abs=1e-6)
        assert val == pytest.approx(-1.0, abs=1e-10)

    def test_matches_grid_search(self):
        f = lambda t: math.sin(t) - 0.1 * t * t  # noqa: E731
        grid = np.arange(0.0, 3.0, 1e-4)
        best = grid[np.argmax([f(t) for t in grid])]
        x, _ = maximize_scalar(f, 0.0, 3.0, tol=1e-6)
        assert x == pytest.approx(best, abs=1e-3)


class TestMaximizeMultivariate:
    def test_quadratic_bowl(self):
        x, _ = maximize_multivariate(lambda z: -float(z @ z), np.array([1.0, 1.0]), tol=1e-8)
        np.testing.assert_allclose(x, [0.0, 0.0], atol=1e-6)

    def test_shifted_optimum(self):
        f = lambda z: -((z[0] - 1.0) ** 2) - (z[1] + 2.0) ** 2  # noqa: E731
        x, _ = maximize_multivariate(f, np.zeros(2), tol=1e-8)
        np.testing.assert_allclose(x, [1.0, -2.0], atol=1e-6)

    def test_supplied_gradient(self):
        f = lambda z: -((z[0] - 1.0) ** 2) - 4.0 * (z[1] + 0.5) ** 2  # noqa: E731
        g = lambda z: np.array([-2.0 * (z[0] - 1.0), -8.0 * (z[1] + 0.5)])  # noqa: E731
        x, _ = maximize_multivariate(f, np.zeros(2), tol=1e-9, grad=g)
        np.testing.assert_allclose(x, [1.0, -0.5], atol=1e-7)

    def test_nonfinite_start_raises(self):
        with pytest.raises(NonFiniteObjective):
            maximize_multivariate(lambda z: float("nan"), np.zeros(2))

    def test_rosenbrock_like(self):
        f = lambda z: -((1 - z[0]) ** 2) - 5.0 * (z[1] - z[0] ** 2) ** 2  # noqa: E731
        x, _ = maximize_multivariate(f, np.array([-1.0, 1.0]), tol=1e-7, max_iter=500)
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-4)

    def test_separable_coordinate_permutation(self):
        f = lambda z: -((z[0] - 0.3) ** 2) - (z[1] + 0.7) ** 2 - (z[2] - 1.1) ** 2  # noqa: E731
        fp = lambda z: f(np.array([z[2], z[0], z[1]]))  # permuted arguments # noqa: E731
        x, _ = maximize_multivariate(f, np.zeros(3), tol=1e-8)
        xp, _ = maximize_multivariate(fp, np.zeros(3), tol=1e-8)
        np.testing.assert_allclose(xp, np.array([x[1], x[2], x[0]]), atol=1e-6)

    def test_central_difference_gradient(self):
        f = lambda z: -float(z @ z) + 3.0 * z[0]  # noqa: E731
        g = central_difference_gradient(f, np.array([0.4, -0.2]))
        np.testing.assert_allclose(g, [-0.8 + 3.0, 0.4], atol=1e-6)


def test_quadrature_config_validation():
    with pytest.raises(DomainError):
        QuadratureConfig(abs_tol=0.0)
