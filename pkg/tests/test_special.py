import math

import numpy as np
import pytest
import scipy.special as sc
from hypothesis import given, settings
from hypothesis import strategies as st

from gbart.errors import NumericalError
from gbart.special import (
    digamma,
    log_gamma_fn,
    log_logistic,
    log_reg_upper_inc_gamma,
    logistic,
    reg_upper_inc_gamma,
    trigamma,
)

EULER = 0.5772156649015329


class TestClassicalValues:
    def test_digamma_one(self):
        assert digamma(1.0) == pytest.approx(-EULER, rel=1e-8)

    def test_trigamma_one(self):
        assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-8)

    @pytest.mark.parametrize("x", [0.0, 1.0, 5.0])
    def test_q_exponential_case(self, x):
        assert reg_upper_inc_gamma(1.0, x) == pytest.approx(math.exp(-x), rel=1e-10)

    @pytest.mark.parametrize("a", [0.1, 1.0, 7.5, 40.0])
    def test_q_at_zero(self, a):
        assert reg_upper_inc_gamma(a, 0.0) == 1.0

    def test_logistic_zero(self):
        assert logistic(0.0) == 0.5

    def test_logistic_symmetry(self):
        x = np.linspace(-30, 30, 601)
        np.testing.assert_allclose(logistic(-x), 1.0 - logistic(x), atol=1e-15)

    def test_log_logistic_extremes(self):
        assert log_logistic(-800.0) == pytest.approx(-800.0)
        assert log_logistic(800.0) == 0.0


class TestAgainstScipy:
    x = np.concatenate([np.geomspace(1e-6, 1.0, 40), np.linspace(1.0, 300.0, 60)])

    def test_digamma(self):
        np.testing.assert_allclose(digamma(self.x), sc.digamma(self.x), rtol=1e-12, atol=1e-12)

    def test_trigamma(self):
        np.testing.assert_allclose(trigamma(self.x), sc.polygamma(1, self.x), rtol=1e-11)

    def test_log_gamma(self):
        np.testing.assert_allclose(log_gamma_fn(self.x), sc.gammaln(self.x), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("a", [0.05, 0.5, 1.0, 3.3, 20.0, 39.0])
    def test_q(self, a):
        x = np.concatenate([[0.0], np.geomspace(1e-8, 200.0, 200)])
        expected = sc.gammaincc(a, x)
        keep = expected > 1e-300
        np.testing.assert_allclose(reg_upper_inc_gamma(np.full(x.shape, a), x)[keep], expected[keep], rtol=1e-12)

    def test_log_q_deep_tail(self):
        # log Q(1, x) = -x even where Q itself underflows
        assert log_reg_upper_inc_gamma(1.0, 1000.0) == pytest.approx(-1000.0, rel=1e-12)


class TestDomain:
    @pytest.mark.parametrize("fn", [digamma, trigamma, log_gamma_fn])
    @pytest.mark.parametrize("x", [0.0, -1.0, np.nan])
    def test_gamma_family(self, fn, x):
        with pytest.raises(NumericalError):
            fn(x)

    def test_q_domain(self):
        with pytest.raises(NumericalError):
            reg_upper_inc_gamma(0.0, 1.0)
        with pytest.raises(NumericalError):
            reg_upper_inc_gamma(1.0, -0.5)


class TestShapeProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_trigamma_positive(self, x):
        assert trigamma(x) > 0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-2, 50.0))
    def test_q_decreasing(self, a):
        x = np.linspace(0.0, 4 * a + 20, 300)
        q = reg_upper_inc_gamma(np.full(x.shape, a), x)
        assert np.all(np.diff(q) <= 1e-15)
        assert q[0] == 1.0
