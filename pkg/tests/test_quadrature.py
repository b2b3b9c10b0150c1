import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from postamp.quadrature import (
    DEFAULT_ORDER,
    gaussian_expectation,
    gaussian_expectation_2d,
    gh_nodes,
    order_for,
    product_rule_2d,
)


def _adaptive(f, mean, var):
    s = np.sqrt(var)
    dens = lambda z: f(mean + s * z) * np.exp(-z * z / 2) / np.sqrt(2 * np.pi)
    return quad(dens, -40, 40, epsabs=1e-14, epsrel=1e-13, limit=400)[0]


class TestNodes:
    def test_weights_sum_to_one(self):
        for order in (2, 10, 200, 1600):
            z, w = gh_nodes(order)
            assert z.shape == w.shape == (order,)
            np.testing.assert_allclose(w.sum(), 1.0, rtol=1e-14)

    def test_nodes_are_read_only(self):
        z, _ = gh_nodes(20)
        with pytest.raises(ValueError):
            z[0] = 1.0

    def test_rejects_order_below_two(self):
        with pytest.raises(ValueError):
            gh_nodes(1)

    def test_order_for_grows_with_variance(self):
        assert order_for(0.5) == DEFAULT_ORDER
        assert order_for(2.0) == DEFAULT_ORDER
        assert order_for(9.0) > order_for(4.0) > DEFAULT_ORDER


class TestGaussianExpectation:
    @given(
        degree=st.integers(0, 12),
        mean=st.floats(-2, 2),
        var=st.floats(0.01, 4),
    )
    def test_polynomials_below_twice_order_are_exact(self, degree, mean, var):
        # E[(mean + s G)^d] by the binomial expansion with E[G^{2j}] = (2j-1)!!
        s = np.sqrt(var)
        exact = 0.0
        for j in range(0, degree + 1, 2):
            from math import comb

            dfact = np.prod(np.arange(j - 1, 0, -2)) if j > 0 else 1.0
            exact += comb(degree, j) * mean ** (degree - j) * s**j * dfact
        got = gaussian_expectation(lambda x: x**degree, mean, var, order=7)
        np.testing.assert_allclose(got, exact, rtol=1e-10, atol=1e-10)

    def test_zero_variance_returns_integrand_at_mean(self):
        assert gaussian_expectation(np.tanh, 0.7, 0.0) == np.tanh(0.7)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            gaussian_expectation(np.tanh, 0.0, -1.0)

    def test_non_finite_integrand_rejected(self):
        with pytest.raises(ValueError):
            gaussian_expectation(lambda x: np.full_like(x, np.nan), 0.0, 1.0)

    def test_refinement_tanh_squared(self):
        f = lambda t: np.tanh(t) ** 2
        a = gaussian_expectation(f, 0.5, 0.5, 200)
        b = gaussian_expectation(f, 0.5, 0.5, 400)
        assert abs(a - b) <= 1e-12

    @pytest.mark.parametrize("mean,var", [(0.5, 0.5), (2.0, 2.0), (9.0, 9.0)])
    def test_matches_adaptive_quadrature(self, mean, var):
        f = lambda t: np.tanh(t) ** 3
        got = gaussian_expectation(f, mean, var, order_for(var))
        np.testing.assert_allclose(got, _adaptive(f, mean, var), atol=1e-11)


class TestTwoDimensional:
    def test_second_moments(self):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        mean = np.array([0.3, -0.2])
        e12 = gaussian_expectation_2d(lambda a, b: a * b, cov, mean, order=10)
        np.testing.assert_allclose(e12, cov[0, 1] + mean[0] * mean[1], rtol=1e-13)

    def test_degenerate_covariance(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        val = gaussian_expectation_2d(lambda a, b: (a - b) ** 2, cov, order=20)
        assert abs(val) < 1e-12

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(ValueError):
            gaussian_expectation_2d(lambda a, b: a, np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_product_rule_matches_one_dimensional(self):
        z1, z2, w = product_rule_2d(40)
        np.testing.assert_allclose(w.sum(), 1.0, rtol=1e-13)
        np.testing.assert_allclose(w @ np.tanh(1 + z1) ** 2, gaussian_expectation(lambda t: np.tanh(t) ** 2, 1, 1, 40))
        np.testing.assert_allclose(w @ (z1 * z2), 0.0, atol=1e-14)
