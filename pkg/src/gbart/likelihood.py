"""The pluggable likelihood-family contract and its finite-difference fallback.

A family supplies ``log f(y | lam)`` for the forest output ``lam`` together with
the score ``U = d/dlam log f`` and a curvature: the observed information
``J = -dU/dlam`` and, optionally, the Fisher information ``I(lam) = E[J]``.
All methods are vectorized over observations.
"""

from __future__ import annotations

import copy
import inspect
from typing import Callable

import numpy as np

from .errors import NumericalError

DEFAULT_FD_STEP = 1e-6


def _check_finite(values, what: str):
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite value in {what}")
    return values


def fd_gradient(f: Callable, lam, step: float = DEFAULT_FD_STEP):
    """Central difference ``(f(lam + step) - f(lam - step)) / (2 step)``."""
    hi = _check_finite(f(lam + step), "finite-difference evaluation")
    lo = _check_finite(f(lam - step), "finite-difference evaluation")
    return (hi - lo) / (2.0 * step)


def fd_hessian(f: Callable, lam, step: float = DEFAULT_FD_STEP):
    """Second central difference ``(f(lam + step) - 2 f(lam) + f(lam - step)) / step**2``."""
    hi = _check_finite(f(lam + step), "finite-difference evaluation")
    mid = _check_finite(f(lam), "finite-difference evaluation")
    lo = _check_finite(f(lam - step), "finite-difference evaluation")
    return (hi - 2.0 * mid + lo) / step**2


class LikelihoodFamily:
    """Base class for likelihood families.

    Subclasses implement :meth:`log_density`, :meth:`score` and
    :meth:`observed_info`, and may define ``fisher_info(lam)``.  Nuisance
    parameters live on the instance; :meth:`update_nuisance` is a Markov kernel
    that leaves their full conditional invariant.
    """

    name = "custom"
    #: Outcomes come with an event indicator ``delta`` (1 = event observed).
    survival = False
    #: Use Fisher information rather than observed information for Laplace proposals.
    use_fisher = True
    fisher_info = None

    def log_density(self, y, lam, delta=None):
        raise NotImplementedError

    def score(self, y, lam, delta=None):
        raise NotImplementedError

    def observed_info(self, y, lam, delta=None):
        raise NotImplementedError

    def score_and_info(self, y, lam, delta=None):
        """Score and the curvature used by Fisher scoring (or Newton's method)."""
        u = self.score(y, lam, delta)
        if self.use_fisher and self.fisher_info is not None:
            return u, self.fisher_info(lam)
        return u, self.observed_info(y, lam, delta)

    @property
    def nuisance(self) -> dict[str, float]:
        return {}

    def set_nuisance(self, **values) -> None:
        for key, value in values.items():
            if key not in self.nuisance:
                raise KeyError(f"{self.name} has no nuisance parameter {key!r}")
            setattr(self, key, float(value))

    def initialize(self, y, delta=None) -> None:
        """Set data-dependent defaults before sampling starts."""

    def update_nuisance(self, y, lam, delta, rng: np.random.Generator) -> None:
        """One Markov step for the nuisance parameters given the forest fit ``lam``."""

    def log_nuisance_prior(self) -> float:
        return 0.0

    def validate(self, y, delta=None) -> None:
        """Raise :class:`~gbart.errors.ValidationError` for outcomes outside the support."""

    def predict_transform(self, lam) -> dict[str, np.ndarray]:
        """Model-specific summaries of ``lam`` reported alongside ``r(x)``."""
        return {}

    def sample(self, lam, rng: np.random.Generator):
        """Draw outcomes at ``lam`` (used for Monte Carlo checks)."""
        raise NotImplementedError

    def copy(self) -> "LikelihoodFamily":
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v:.4g}" for k, v in self.nuisance.items())
        return f"{type(self).__name__}({args})"


class FiniteDifferenceFamily(LikelihoodFamily):
    """Family whose derivatives come from central differences of ``log_density``.

    No Fisher information is available, so Laplace proposals use Newton steps on
    the observed information.
    """

    use_fisher = False

    def __init__(self, log_density: Callable | None = None, fd_delta: float = DEFAULT_FD_STEP):
        self._fn = log_density
        self._fn_takes_delta = log_density is not None and _accepts_delta(log_density)
        self.fd_delta = fd_delta

    def log_density(self, y, lam, delta=None):
        if self._fn is None:
            raise NotImplementedError
        if self._fn_takes_delta:
            return self._fn(y, lam, delta)
        return self._fn(y, lam)

    def _curried(self, y, delta):
        return lambda lam: self.log_density(y, lam, delta)

    def score(self, y, lam, delta=None):
        return fd_gradient(self._curried(y, delta), np.asarray(lam, dtype=float), self.fd_delta)

    def observed_info(self, y, lam, delta=None):
        return -fd_hessian(self._curried(y, delta), np.asarray(lam, dtype=float), self.fd_delta)

    def score_and_info(self, y, lam, delta=None):
        lam = np.asarray(lam, dtype=float)
        h = self.fd_delta
        hi = _check_finite(self.log_density(y, lam + h, delta), "finite-difference evaluation")
        mid = _check_finite(self.log_density(y, lam, delta), "finite-difference evaluation")
        lo = _check_finite(self.log_density(y, lam - h, delta), "finite-difference evaluation")
        return (hi - lo) / (2.0 * h), -(hi - 2.0 * mid + lo) / h**2


def _accepts_delta(fn: Callable) -> bool:
    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return False
    positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    return len(positional) >= 3 or any(p.kind == p.VAR_POSITIONAL for p in params)


def wrap_with_fd(log_density: Callable, fd_delta: float = DEFAULT_FD_STEP) -> FiniteDifferenceFamily:
    """Build a family from ``log_density(y, lam[, delta])`` alone."""
    return FiniteDifferenceFamily(log_density, fd_delta)
