"""Built-in likelihood families.

Every family is parameterized by the forest output ``lam = r(x)``.  Survival
families take an event indicator ``delta`` (1 = event observed, 0 = right
censored) and return log densities on the time scale, so log likelihoods of
different survival families are directly comparable.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from . import special
from .errors import NumericalError, ValidationError
from .likelihood import DEFAULT_FD_STEP, FiniteDifferenceFamily, LikelihoodFamily
from .slice import log_half_cauchy, slice_sample

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _slice_log_param(family, name, log_target, rng, width=0.5, upper=math.inf):
    """Slice-update ``log(family.<name>)`` in place."""
    x0 = math.log(getattr(family, name))
    try:
        x1, _ = slice_sample(x0, log_target, width, rng, upper=upper)
    except Exception:
        setattr(family, name, math.exp(x0))
        raise
    setattr(family, name, math.exp(x1))


class GaussianFamily(LikelihoodFamily):
    """``y ~ Normal(lam, sigma**2)``.

    ``sigma`` has a half-Cauchy prior whose scale is the sample standard
    deviation of the training outcomes (set by :meth:`initialize`).
    """

    name = "gaussian"

    def __init__(self, sigma: float = 1.0, prior_scale: float = 1.0):
        self.sigma = float(sigma)
        self.prior_scale = float(prior_scale)

    @property
    def nuisance(self):
        return {"sigma": self.sigma}

    def initialize(self, y, delta=None):
        sd = float(np.std(y, ddof=1)) if len(y) > 1 else 1.0
        sd = sd if sd > 0 else 1.0
        self.sigma = sd
        self.prior_scale = sd

    def log_density(self, y, lam, delta=None):
        r = (y - lam) / self.sigma
        return -0.5 * r * r - math.log(self.sigma) - _HALF_LOG_2PI

    def score(self, y, lam, delta=None):
        return (y - lam) / self.sigma**2

    def observed_info(self, y, lam, delta=None):
        return np.full(np.shape(lam), 1.0 / self.sigma**2)

    def fisher_info(self, lam):
        return np.full(np.shape(lam), 1.0 / self.sigma**2)

    def log_nuisance_prior(self):
        return log_half_cauchy(self.sigma, self.prior_scale)

    def update_nuisance(self, y, lam, delta, rng):
        n = len(y)
        sse = float(np.dot(y - lam, y - lam))

        def log_target(log_sigma):
            sigma = math.exp(log_sigma)
            return (-n * log_sigma - 0.5 * sse / sigma**2
                    + log_half_cauchy(sigma, self.prior_scale) + log_sigma)

        _slice_log_param(self, "sigma", log_target, rng)

    def predict_transform(self, lam):
        return {"mean": np.asarray(lam)}

    def sample(self, lam, rng):
        return lam + self.sigma * rng.standard_normal(np.shape(lam))


class LogisticFamily(LikelihoodFamily):
    """Binary outcomes with ``P(y = 1) = logistic(lam)``; no nuisance parameters."""

    name = "logistic"

    def validate(self, y, delta=None):
        y = np.asarray(y)
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("logistic outcomes must be 0 or 1")

    def log_density(self, y, lam, delta=None):
        return y * special.log_logistic(lam) + (1.0 - y) * special.log_logistic(-np.asarray(lam))

    def score(self, y, lam, delta=None):
        return y - special.logistic(lam)

    def observed_info(self, y, lam, delta=None):
        return self.fisher_info(lam)

    def fisher_info(self, lam):
        p = special.logistic(lam)
        return p * (1.0 - p)

    def predict_transform(self, lam):
        return {"prob": special.logistic(np.asarray(lam))}

    def sample(self, lam, rng):
        return (rng.random(np.shape(lam)) < special.logistic(lam)).astype(float)


class PoissonFamily(LikelihoodFamily):
    """``y ~ Poisson(exp(lam))``; no nuisance parameters."""

    name = "poisson"

    def validate(self, y, delta=None):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValidationError("poisson outcomes must be nonnegative integers")

    def log_density(self, y, lam, delta=None):
        return y * lam - np.exp(lam) - special._lgamma(np.asarray(y, dtype=float) + 1.0)

    def score(self, y, lam, delta=None):
        return y - np.exp(lam)

    def observed_info(self, y, lam, delta=None):
        return np.exp(lam)

    def fisher_info(self, lam):
        return np.exp(lam)

    def predict_transform(self, lam):
        return {"mean": np.exp(lam)}

    def sample(self, lam, rng):
        return rng.poisson(np.exp(lam)).astype(float)


# (g, g', g'') for the mean link m = g(lam)
LINKS = {
    "identity": (lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "exp": (np.exp, np.exp, np.exp),
}

# (V, V', V'') for the variance function
VARIANCES = {
    "1": (np.ones_like, np.zeros_like, np.zeros_like),
    "m": (lambda m: m, np.ones_like, np.zeros_like),
    "m2": (lambda m: m * m, lambda m: 2.0 * m, lambda m: np.full_like(m, 2.0)),
}


class HetVarFamily(LikelihoodFamily):
    """Gaussian working model ``y ~ Normal(m, phi * V(m))`` with ``m = g(lam)``.

    Parameters
    ----------
    phi : float
        Dispersion.
    link : {"identity", "exp"}
    variance : {"1", "m", "m2"}
        Variance function ``V(m)``.
    phi_prior : {"reference", "half_cauchy"}
        ``"reference"`` draws ``1 / phi`` exactly from
        ``Gamma(N / 2, rate = sum((y - m)**2 / V(m)) / 2)``; ``"half_cauchy"``
        slice-samples ``phi`` under a half-Cauchy(0, 1) prior.
    """

    name = "hetvar"

    def __init__(self, phi: float = 1.0, link: str = "exp", variance: str = "m",
                 phi_prior: str = "reference"):
        if link not in LINKS:
            raise ValueError(f"unknown link {link!r}; choose from {sorted(LINKS)}")
        if variance not in VARIANCES:
            raise ValueError(f"unknown variance function {variance!r}; choose from {sorted(VARIANCES)}")
        if phi_prior not in ("reference", "half_cauchy"):
            raise ValueError(f"unknown phi_prior {phi_prior!r}")
        self.phi = float(phi)
        self.link = link
        self.variance = variance
        self.phi_prior = phi_prior

    @property
    def nuisance(self):
        return {"phi": self.phi}

    def _mean_var(self, lam):
        lam = np.asarray(lam, dtype=float)
        g, dg, d2g = LINKS[self.link]
        V, dV, d2V = VARIANCES[self.variance]
        m = g(lam)
        v = V(m)
        if np.any(v <= 0):
            raise NumericalError("variance function is not positive at the current mean")
        return lam, m, v, dV(m), d2V(m), dg(lam), d2g(lam)

    def log_density(self, y, lam, delta=None):
        _, m, v, *_ = self._mean_var(lam)
        return -0.5 * np.log(2.0 * math.pi * self.phi * v) - (y - m) ** 2 / (2.0 * self.phi * v)

    def _dlog_dm(self, y, m, v, dv):
        phi = self.phi
        r = y - m
        return -dv / (2.0 * v) + dv * r * r / (2.0 * phi * v * v) + r / (phi * v)

    def score(self, y, lam, delta=None):
        _, m, v, dv, _, dg, _ = self._mean_var(lam)
        return self._dlog_dm(y, m, v, dv) * dg

    def observed_info(self, y, lam, delta=None):
        _, m, v, dv, d2v, dg, d2g = self._mean_var(lam)
        phi = self.phi
        r = y - m
        first = self._dlog_dm(y, m, v, dv)
        second = (
            -(v * d2v - dv * dv) / (2.0 * v * v)
            + (d2v * r * r / v**2 - 2.0 * dv * dv * r * r / v**3 - 2.0 * dv * r / v**2) / (2.0 * phi)
            - (1.0 / v + r * dv / v**2) / phi
        )
        return -(first * d2g + second * dg * dg)

    def fisher_info(self, lam):
        _, m, v, dv, _, dg, _ = self._mean_var(lam)
        return (dv * dv / (2.0 * v * v) + 1.0 / (self.phi * v)) * dg * dg

    def log_nuisance_prior(self):
        if self.phi_prior == "half_cauchy":
            return log_half_cauchy(self.phi, 1.0)
        return -math.log(self.phi)

    def update_nuisance(self, y, lam, delta, rng):
        _, m, v, *_ = self._mean_var(lam)
        half_ss = 0.5 * float(np.sum((y - m) ** 2 / v))
        n = len(y)
        if self.phi_prior == "reference":
            tau = rng.gamma(0.5 * n, 1.0 / half_ss)
            self.phi = 1.0 / tau
            return

        def log_target(log_phi):
            phi = math.exp(log_phi)
            return -0.5 * n * log_phi - half_ss / phi + log_half_cauchy(phi, 1.0) + log_phi

        _slice_log_param(self, "phi", log_target, rng)

    def predict_transform(self, lam):
        g = LINKS[self.link][0]
        return {"mean": g(np.asarray(lam, dtype=float))}

    def sample(self, lam, rng):
        _, m, v, *_ = self._mean_var(lam)
        return m + np.sqrt(self.phi * v) * rng.standard_normal(np.shape(m))


class _SurvivalFamily(LikelihoodFamily):
    survival = True
    # Fisher information under censoring depends on the censoring law, so
    # proposals use the observed information.
    use_fisher = False

    def validate(self, y, delta=None):
        if delta is None:
            raise ValidationError(f"{self.name} needs an event indicator column 'delta'")
        y = np.asarray(y, dtype=float)
        delta = np.asarray(delta, dtype=float)
        if np.any(y <= 0):
            raise ValidationError(f"{self.name} outcomes must be positive times")
        if not np.all((delta == 0) | (delta == 1)):
            raise ValidationError("delta must be 0 or 1")

    def survival_function(self, t, lam):
        raise NotImplementedError

    def _events(self, y, delta):
        return np.ones(np.shape(y)) if delta is None else delta


class AftLogLogisticFamily(_SurvivalFamily):
    """Accelerated failure time model ``log T = lam + sigma * eps`` with logistic ``eps``."""

    name = "aft_loglogistic"

    def __init__(self, sigma: float = 1.0):
        self.sigma = float(sigma)

    @property
    def nuisance(self):
        return {"sigma": self.sigma}

    def _z(self, y, lam):
        return (np.log(y) - lam) / self.sigma

    def log_density(self, y, lam, delta=None):
        delta = self._events(y, delta)
        z = self._z(y, lam)
        log_surv = special.log_logistic(-z)
        log_hazard = special.log_logistic(z) - math.log(self.sigma) - np.log(y)
        return log_surv + delta * log_hazard

    def score(self, y, lam, delta=None):
        delta = self._events(y, delta)
        p = special.logistic(self._z(y, lam))
        return (p - delta * (1.0 - p)) / self.sigma

    def observed_info(self, y, lam, delta=None):
        delta = self._events(y, delta)
        p = special.logistic(self._z(y, lam))
        return (1.0 + delta) * p * (1.0 - p) / self.sigma**2

    def fisher_info(self, lam):
        # expectation for uncensored outcomes: 2 E[p(1-p)] with p ~ Uniform(0, 1)
        return np.full(np.shape(lam), 1.0 / (3.0 * self.sigma**2))

    def survival_function(self, t, lam):
        with np.errstate(divide="ignore"):
            z = (np.log(t) - lam) / self.sigma
        return special.logistic(-z)

    def log_nuisance_prior(self):
        return log_half_cauchy(self.sigma, 1.0)

    def update_nuisance(self, y, lam, delta, rng):
        def log_target(log_sigma):
            self.sigma = math.exp(log_sigma)
            return float(np.sum(self.log_density(y, lam, delta))) + self.log_nuisance_prior() + log_sigma

        _slice_log_param(self, "sigma", log_target, rng)

    def predict_transform(self, lam):
        return {"median_time": np.exp(lam)}

    def sample(self, lam, rng):
        u = rng.random(np.shape(lam))
        return np.exp(lam + self.sigma * np.log(u / (1.0 - u)))


@numba.njit(cache=True)
def _gengamma_kernel(y, lam, delta, has_delta, sigma, alpha):
    n = y.size
    out = np.empty(n)
    const = alpha * math.log(alpha) - math.lgamma(alpha) - math.log(sigma)
    for i in range(n):
        log_y = math.log(y[i])
        z = (log_y - lam[i]) / sigma
        ez = math.exp(min(z, 700.0))
        if has_delta and delta[i] == 0:
            out[i] = special._log_q_scalar(alpha, alpha * ez)
        else:
            out[i] = const + alpha * z - alpha * ez - log_y
    return out


def gengamma_aft_log_density(y, lam, delta, sigma, alpha):
    """Time-scale log likelihood of the generalized gamma AFT model.

    ``log T = lam + sigma * eps`` where ``exp(eps) ~ Gamma(alpha, rate=alpha)``.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if y.shape != lam.shape:
        y, lam = np.broadcast_arrays(y, lam)
    shape = y.shape
    has_delta = delta is not None
    d = np.asarray(delta, dtype=float) if has_delta else y
    if d.shape != shape:
        d = np.broadcast_to(d, shape)
    out = _gengamma_kernel(np.ascontiguousarray(y).ravel(), np.ascontiguousarray(lam).ravel(),
                           np.ascontiguousarray(d).ravel(), has_delta, float(sigma), float(alpha))
    return out.reshape(shape)


class AftGenGammaFamily(_SurvivalFamily, FiniteDifferenceFamily):
    """Generalized gamma AFT model with finite-difference derivatives.

    ``(sigma, alpha)`` have half-Cauchy(0, 1) and Uniform(0, 40) priors.
    """

    name = "aft_gengamma"
    alpha_max = 40.0

    def __init__(self, sigma: float = 1.0, alpha: float = 1.0, fd_delta: float = DEFAULT_FD_STEP):
        FiniteDifferenceFamily.__init__(self, None, fd_delta)
        self.sigma = float(sigma)
        self.alpha = float(alpha)

    @property
    def nuisance(self):
        return {"sigma": self.sigma, "alpha": self.alpha}

    def log_density(self, y, lam, delta=None):
        return gengamma_aft_log_density(y, lam, delta, self.sigma, self.alpha)

    def survival_function(self, t, lam):
        with np.errstate(divide="ignore"):
            z = (np.log(t) - lam) / self.sigma
        x = self.alpha * np.exp(np.minimum(z, 700.0))
        return np.exp(special._log_q(np.full(np.shape(x), self.alpha), x))

    def log_nuisance_prior(self):
        if not 0 < self.alpha <= self.alpha_max:
            return -math.inf
        return log_half_cauchy(self.sigma, 1.0) - math.log(self.alpha_max)

    def variance_log_time(self) -> float:
        """``Var(log T | r) = sigma**2 * trigamma(alpha)``."""
        return self.sigma**2 * special.trigamma(self.alpha)

    def _log_target(self, y, lam, delta, log_sigma, log_alpha):
        self.sigma = math.exp(log_sigma)
        self.alpha = math.exp(log_alpha)
        prior = self.log_nuisance_prior()
        if not np.isfinite(prior):
            return -math.inf
        return float(np.sum(self.log_density(y, lam, delta))) + prior + log_sigma + log_alpha

    def update_nuisance(self, y, lam, delta, rng):
        log_sigma, log_alpha = math.log(self.sigma), math.log(self.alpha)
        log_alpha_max = math.log(self.alpha_max)
        try:
            log_sigma, cur = slice_sample(
                log_sigma, lambda s: self._log_target(y, lam, delta, s, log_alpha), 0.5, rng)
            log_alpha, cur = slice_sample(
                log_alpha, lambda a: self._log_target(y, lam, delta, log_sigma, a), 0.5, rng,
                log_target_x0=cur, upper=log_alpha_max)

            # (log V, log alpha) has a constant Jacobian against (log sigma, log alpha), so
            # a slice move in log alpha at fixed V = sigma^2 trigamma(alpha) is valid and
            # moves along the ridge where sigma and alpha are confounded.
            log_v = 2.0 * log_sigma + math.log(special.trigamma(math.exp(log_alpha)))

            def ridge(a):
                s = 0.5 * (log_v - math.log(special.trigamma(math.exp(a))))
                return self._log_target(y, lam, delta, s, a)

            log_alpha, _ = slice_sample(log_alpha, ridge, 0.5, rng, log_target_x0=cur,
                                        upper=log_alpha_max)
            log_sigma = 0.5 * (log_v - math.log(special.trigamma(math.exp(log_alpha))))
        finally:
            self.sigma = math.exp(log_sigma)
            self.alpha = math.exp(log_alpha)

    def predict_transform(self, lam):
        shift = self.sigma * (special.digamma(self.alpha) - math.log(self.alpha))
        return {"mean_log_time": np.asarray(lam) + shift}

    def sample(self, lam, rng):
        g = rng.gamma(self.alpha, 1.0 / self.alpha, np.shape(lam))
        return np.exp(lam + self.sigma * np.log(g))


class WeibullFamily(_SurvivalFamily):
    """Weibull survival with hazard ``(k / e^lam) (t / e^lam)^(k - 1)``; ``k`` ~ half-Cauchy(0, 1)."""

    name = "weibull"

    def __init__(self, k: float = 1.0):
        self.k = float(k)

    @property
    def nuisance(self):
        return {"k": self.k}

    def _w(self, y, lam):
        return self.k * (np.log(y) - lam)

    def log_density(self, y, lam, delta=None):
        delta = self._events(y, delta)
        w = self._w(y, lam)
        return -np.exp(w) + delta * (math.log(self.k) + w - np.log(y))

    def score(self, y, lam, delta=None):
        delta = self._events(y, delta)
        return self.k * (np.exp(self._w(y, lam)) - delta)

    def observed_info(self, y, lam, delta=None):
        return self.k**2 * np.exp(self._w(y, lam))

    def fisher_info(self, lam):
        # (T / e^lam)^k is standard exponential for uncensored outcomes
        return np.full(np.shape(lam), self.k**2)

    def survival_function(self, t, lam):
        return np.exp(-(np.asarray(t, dtype=float) * np.exp(-np.asarray(lam))) ** self.k)

    def log_nuisance_prior(self):
        return log_half_cauchy(self.k, 1.0)

    def update_nuisance(self, y, lam, delta, rng):
        def log_target(log_k):
            self.k = math.exp(log_k)
            return float(np.sum(self.log_density(y, lam, delta))) + self.log_nuisance_prior() + log_k

        _slice_log_param(self, "k", log_target, rng)

    def predict_transform(self, lam):
        return {"median_time": np.exp(lam) * math.log(2.0) ** (1.0 / self.k)}

    def sample(self, lam, rng):
        return np.exp(lam) * rng.standard_exponential(np.shape(lam)) ** (1.0 / self.k)


class GammaShapeFamily(LikelihoodFamily):
    """``y ~ Gamma(shape = exp(lam), rate = beta_rate)``; ``beta_rate`` ~ half-Cauchy(0, 1)."""

    name = "gamma_shape"

    def __init__(self, beta_rate: float = 1.0):
        self.beta_rate = float(beta_rate)

    @property
    def nuisance(self):
        return {"beta_rate": self.beta_rate}

    def validate(self, y, delta=None):
        if np.any(np.asarray(y, dtype=float) <= 0):
            raise ValidationError("gamma_shape outcomes must be positive")

    def log_density(self, y, lam, delta=None):
        a = np.exp(lam)
        return a * math.log(self.beta_rate) - special._lgamma(a) + (a - 1.0) * np.log(y) - self.beta_rate * y

    def score(self, y, lam, delta=None):
        a = np.exp(lam)
        return a * (math.log(self.beta_rate) - special._digamma(a) + np.log(y))

    def observed_info(self, y, lam, delta=None):
        return self.fisher_info(lam) - self.score(y, lam)

    def fisher_info(self, lam):
        a = np.exp(lam)
        return a * a * special._trigamma(a)

    def log_nuisance_prior(self):
        return log_half_cauchy(self.beta_rate, 1.0)

    def update_nuisance(self, y, lam, delta, rng):
        sum_shape = float(np.sum(np.exp(lam)))
        sum_y = float(np.sum(y))

        def log_target(log_b):
            b = math.exp(log_b)
            return sum_shape * log_b - b * sum_y + log_half_cauchy(b, 1.0) + log_b

        _slice_log_param(self, "beta_rate", log_target, rng)

    def predict_transform(self, lam):
        a = np.exp(np.asarray(lam, dtype=float))
        return {"shape": a, "mean": a / self.beta_rate}

    def sample(self, lam, rng):
        return rng.gamma(np.exp(lam), 1.0 / self.beta_rate)


class ConstantFamily(LikelihoodFamily):
    """``log f = 0``: the posterior equals the prior.  Used to check samplers."""

    name = "constant"

    def log_density(self, y, lam, delta=None):
        return np.zeros(np.shape(lam))

    def score(self, y, lam, delta=None):
        return np.zeros(np.shape(lam))

    def observed_info(self, y, lam, delta=None):
        return np.zeros(np.shape(lam))

    def fisher_info(self, lam):
        return np.zeros(np.shape(lam))


FAMILIES = {
    cls.name: cls
    for cls in (
        GaussianFamily, LogisticFamily, PoissonFamily, HetVarFamily,
        AftLogLogisticFamily, AftGenGammaFamily, WeibullFamily, GammaShapeFamily,
    )
}


def make_family(name: str, **options) -> LikelihoodFamily:
    """Instantiate a built-in family by name."""
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown model {name!r}; choose from {', '.join(FAMILIES)}") from None
    return cls(**options)
