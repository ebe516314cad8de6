"""Special functions used by the likelihood families.

The gamma-family functions are compiled numba ufuncs so they broadcast over
arrays at C speed.  The public wrappers check the domain and raise
:class:`~gbart.errors.NumericalError` instead of silently returning NaN.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import NumericalError

_EPS = 1e-15
_TINY = 1e-300
_MAXITER = 2000


@numba.njit(cache=True)
def _digamma_scalar(x):
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))))
    return acc + math.log(x) - 0.5 * inv - series


@numba.njit(cache=True)
def _trigamma_scalar(x):
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # Bernoulli-number asymptotic expansion
    series = inv + 0.5 * inv2 + inv * inv2 * (
        1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66))))
    )
    return acc + series


@numba.njit(cache=True)
def _log_q_scalar(a, x):
    if x <= 0.0:
        return 0.0
    log_prefactor = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # series for the lower regularized function P, then Q = 1 - P
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(_MAXITER):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        p = math.exp(log_prefactor) * total
        if p >= 1.0:
            return -math.inf
        return math.log1p(-p)
    # modified Lentz continued fraction for Q
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAXITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return log_prefactor + math.log(h)


@numba.vectorize(["float64(float64)"], cache=True)
def _digamma(x):
    return _digamma_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _trigamma(x):
    return _trigamma_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _lgamma(x):
    return math.lgamma(x)


@numba.vectorize(["float64(float64, float64)"], cache=True)
def _log_q(a, x):
    return _log_q_scalar(a, x)


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise NumericalError(f"{name} requires positive finite arguments")
    return x


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def digamma(x):
    """Derivative of ``log Gamma``."""
    return _out(_digamma(_positive("digamma", x)))


def trigamma(x):
    """Second derivative of ``log Gamma``."""
    return _out(_trigamma(_positive("trigamma", x)))


def log_gamma_fn(x):
    return _out(_lgamma(_positive("log_gamma_fn", x)))


def log_reg_upper_inc_gamma(a, x):
    """``log Q(a, x)``, accurate deep into the upper tail where ``Q`` underflows."""
    a = _positive("reg_upper_inc_gamma", a)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise NumericalError("reg_upper_inc_gamma requires x >= 0")
    return _out(_log_q(a, x))


def reg_upper_inc_gamma(a, x):
    """Regularized upper incomplete gamma ``Q(a, x) = Gamma(a, x) / Gamma(a)``."""
    return _out(np.exp(log_reg_upper_inc_gamma(a, x)))


def logistic(x):
    """``1 / (1 + exp(-x))`` without overflow."""
    return _out(np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=float))))


def log_logistic(x):
    """``log logistic(x)``."""
    return _out(-np.logaddexp(0.0, -np.asarray(x, dtype=float)))
