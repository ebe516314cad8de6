"""Chain orchestration and posterior summaries: prediction, survival curves, LPML and held-out metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .config import SamplerConfig
from .data import Dataset
from .errors import UnsupportedModelError, ValidationError
from .likelihood import LikelihoodFamily
from .models import AftGenGammaFamily
from .sampler import MOVES, SamplerState, gibbs_iteration
from .special import trigamma
from .tree import Forest

log = logging.getLogger(__name__)


@dataclass
class ChainTrace:
    """Output of one or more chains.

    ``metrics`` holds one entry per sweep (every iteration, burn-in included);
    ``forests``, ``nuisance``, ``pointwise_loglik`` and ``predictions`` hold
    one entry per kept draw.  ``heldout_lambda`` is filled when held-out
    covariates were passed to :func:`run_chain`, with one row per sweep.
    """

    model: str
    config: SamplerConfig
    metrics: dict[str, np.ndarray]
    forests: list[Forest]
    nuisance: list[dict]
    pointwise_loglik: np.ndarray
    predictions: np.ndarray | None = None
    heldout_lambda: np.ndarray | None = None
    laplace_calls: int = 0
    laplace_capped: int = 0
    family: LikelihoodFamily | None = field(default=None, repr=False)

    @property
    def num_kept(self) -> int:
        return len(self.nuisance)

    def family_at(self, m: int) -> LikelihoodFamily:
        """Copy of the family with the nuisance values of kept draw ``m``."""
        fam = self.family.copy()
        fam.set_nuisance(**self.nuisance[m])
        return fam

    def nuisance_array(self, name: str) -> np.ndarray:
        return np.array([d[name] for d in self.nuisance])

    @property
    def kept_mask(self) -> np.ndarray:
        """Per-sweep flag marking the sweeps whose draws were kept."""
        return self.metrics["kept"].astype(bool)


def _rng_streams(seed: int, chains: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chains)]


def run_chain(config: SamplerConfig, data: Dataset, family: LikelihoodFamily,
              rng: np.random.Generator | None = None, chain: int = 0,
              X_pred: np.ndarray | None = None, X_heldout: np.ndarray | None = None,
              keep_forests: bool = True,
              on_keep: Callable[[int, Forest, dict], None] | None = None) -> ChainTrace:
    """Run one chain and return its kept draws.

    The family is copied and initialized from the data, so the caller's
    instance is left untouched.  ``X_pred`` requests posterior draws of
    ``r(x)`` at extra points for every kept draw; ``X_heldout`` requests them
    at every sweep (for metric traces).  ``on_keep(m, forest, nuisance)`` is
    called for each kept draw, which lets callers stream snapshots to disk
    with ``keep_forests=False``.
    """
    config.validate()
    if data.y is None:
        raise ValidationError("the training data has no outcome column")
    family = family.copy()
    family.validate(data.y, data.delta)
    family.initialize(data.y, data.delta)
    for X in (X_pred, X_heldout):
        if X is not None and np.shape(X)[1] != data.p:
            raise ValidationError(f"query points have {np.shape(X)[1]} columns, expected {data.p}")
    rng = _rng_streams(config.seed, 1)[0] if rng is None else rng
    state = SamplerState(data.X, data.y, data.delta, family, config)

    n_iter, kept = config.iterations, config.num_kept
    metric_names = (["chain", "iteration", "kept", "log_posterior", "sigma_mu"]
                    + [f"nuisance_{k}" for k in family.nuisance]
                    + [f"{m}_{c}" for m in MOVES for c in ("attempts", "accepts")]
                    + ["mean_leaves", "laplace_capped"])
    metrics = {k: np.zeros(n_iter) for k in metric_names}
    forests, nuisance = [], []
    loglik = np.empty((kept, data.n))
    preds = None if X_pred is None else np.empty((kept, len(X_pred)))
    heldout = None if X_heldout is None else np.empty((n_iter, len(X_heldout)))

    m = 0
    for it in range(n_iter):
        before = {k: (c.attempts, c.accepts) for k, c in state.counters.items()}
        gibbs_iteration(state, rng)
        is_kept = it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0
        row = {
            "chain": chain, "iteration": it + 1, "kept": float(is_kept),
            "log_posterior": state.log_posterior(), "sigma_mu": state.sigma_mu,
            "mean_leaves": np.mean([len(t.leaves()) for t in state.trees]),
            "laplace_capped": state.laplace_capped,
        }
        for k, v in family.nuisance.items():
            row[f"nuisance_{k}"] = v
        for k, c in state.counters.items():
            row[f"{k}_attempts"] = c.attempts - before[k][0]
            row[f"{k}_accepts"] = c.accepts - before[k][1]
        for k, v in row.items():
            metrics[k][it] = v

        if heldout is not None or (is_kept and (keep_forests or preds is not None or on_keep)):
            forest = state.forest()
        if heldout is not None:
            heldout[it] = forest.evaluate(X_heldout)
        if is_kept:
            loglik[m] = family.log_density(state.y, state.fit, state.delta)
            nuisance.append(dict(family.nuisance))
            if keep_forests:
                forests.append(forest)
            if preds is not None:
                preds[m] = forest.evaluate(X_pred)
            if on_keep is not None:
                on_keep(m, forest, dict(family.nuisance))
            m += 1

    if state.laplace_capped:
        log.warning("Fisher scoring hit its iteration cap in %d of %d calls",
                    state.laplace_capped, state.laplace_calls)
    return ChainTrace(family.name, config, metrics, forests, nuisance, loglik, preds, heldout,
                      state.laplace_calls, state.laplace_capped, family)


def merge_traces(traces: list[ChainTrace]) -> ChainTrace:
    """Concatenate kept draws and metric rows of several chains."""
    if len(traces) == 1:
        return traces[0]
    first = traces[0]

    def cat(attr):
        parts = [getattr(t, attr) for t in traces]
        return None if parts[0] is None else np.concatenate(parts)

    metrics = {k: np.concatenate([t.metrics[k] for t in traces]) for k in first.metrics}
    return ChainTrace(
        first.model, first.config, metrics,
        [f for t in traces for f in t.forests], [d for t in traces for d in t.nuisance],
        cat("pointwise_loglik"), cat("predictions"), cat("heldout_lambda"),
        sum(t.laplace_calls for t in traces), sum(t.laplace_capped for t in traces), first.family,
    )


def run_chains(config: SamplerConfig, data: Dataset, family: LikelihoodFamily, **kwargs) -> ChainTrace:
    """Run ``config.chains`` independent chains with streams spawned from ``config.seed``."""
    rngs = _rng_streams(config.seed, config.chains)
    return merge_traces([run_chain(config, data, family, rng=r, chain=c, **kwargs)
                         for c, r in enumerate(rngs)])


# ---------------------------------------------------------------------------
# Summaries


@dataclass
class Band:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_draws(cls, draws: np.ndarray) -> "Band":
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
        return cls(draws.mean(axis=0), lo, hi)


@dataclass
class PosteriorSummary:
    """Posterior mean and pointwise 95% bands of ``r(x)`` and of model transforms."""

    r: Band
    transforms: dict[str, Band]
    draws: np.ndarray = field(repr=False)


def lambda_draws(trace: ChainTrace, X: np.ndarray | None = None) -> np.ndarray:
    """``(num_kept, n)`` draws of ``r(x)``; with ``X=None`` the points given to :func:`run_chain`."""
    if X is None:
        if trace.predictions is None:
            raise ValidationError("no query points: pass X or run the chain with X_pred")
        return trace.predictions
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not trace.forests:
        raise ValidationError("the trace holds no forest snapshots")
    if X.shape[1] != trace.forests[0].num_features:
        raise ValidationError(f"query points have {X.shape[1]} columns, expected {trace.forests[0].num_features}")
    return np.array([f.evaluate(X) for f in trace.forests])


def predict(trace: ChainTrace, X: np.ndarray | None = None) -> PosteriorSummary:
    """Summarize ``r(x)`` and the family's transforms over the kept draws."""
    if trace.num_kept == 0:
        raise ValidationError("the trace has no kept draws")
    lam = lambda_draws(trace, X)
    per_draw = [trace.family_at(m).predict_transform(lam[m]) for m in range(len(lam))]
    transforms = {k: Band.from_draws(np.array([d[k] for d in per_draw])) for k in per_draw[0]}
    return PosteriorSummary(Band.from_draws(lam), transforms, lam)


@dataclass
class SurvivalCurves:
    """Per-point survival curves over a time grid: arrays of shape ``(n_points, n_times)``."""

    times: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray = field(repr=False)


def survival_curve(trace: ChainTrace, x: np.ndarray | None, t_grid) -> SurvivalCurves:
    """Posterior survival curves ``S(t | x)`` with pointwise 95% bands."""
    if not getattr(trace.family, "survival", False):
        raise UnsupportedModelError(f"{trace.model} is not a survival model")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValidationError("survival times must be nonnegative")
    lam = lambda_draws(trace, x)
    draws = np.empty((lam.shape[0], lam.shape[1], t.size))
    with np.errstate(divide="ignore"):
        for m in range(lam.shape[0]):
            fam = trace.family_at(m)
            draws[m] = fam.survival_function(t[None, :], lam[m][:, None])
    draws[..., t == 0] = 1.0
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    return SurvivalCurves(t, draws.mean(axis=0), lo, hi, draws)


def lpml(loglik: np.ndarray) -> tuple[float, np.ndarray]:
    """Log pseudo-marginal likelihood from a ``(draws, n)`` pointwise log-likelihood matrix.

    ``CPO_i`` is the harmonic mean of the per-draw likelihoods; returns
    ``(sum_i log CPO_i, log CPO)``.
    """
    ll = np.atleast_2d(np.asarray(loglik, dtype=float))
    if ll.shape[0] < 1 or not np.all(np.isfinite(ll)):
        raise ValidationError("pointwise log likelihoods must be finite with at least one draw")
    log_cpo = np.log(ll.shape[0]) - logsumexp(-ll, axis=0)
    return float(log_cpo.sum()), log_cpo


def heldout_metrics(trace: ChainTrace, heldout: Dataset, truth: dict | None = None) -> dict[str, np.ndarray]:
    """Per-draw held-out metrics.

    Uses the per-sweep held-out fits when the chain recorded them for these
    points, otherwise evaluates every kept forest.  Always reports ``rmse_r``
    against ``truth["r0"]`` when truth is given; Gaussian fits add ``mse``,
    logistic fits add ``loglik`` and fits with a mean transform add
    ``rmse_mean`` against ``truth["mean"]``.
    """
    if heldout.n == 0:
        raise ValidationError("the held-out set is empty")
    if trace.heldout_lambda is not None and trace.heldout_lambda.shape[1] == heldout.n:
        lam = trace.heldout_lambda
        names = list(trace.family.nuisance)
        nuis = [{k: trace.metrics[f"nuisance_{k}"][i] for k in names} for i in range(len(lam))]
    else:
        lam = lambda_draws(trace, heldout.X)
        nuis = trace.nuisance
    out = {}
    if heldout.y is not None:
        if trace.model == "gaussian":
            out["mse"] = np.mean((heldout.y - lam) ** 2, axis=1)
        elif trace.model == "logistic":
            y = heldout.y
            out["loglik"] = np.sum(y * lam - np.logaddexp(0.0, lam), axis=1)
    if truth is not None:
        if "r0" in truth:
            out["rmse_r"] = np.sqrt(np.mean((lam - truth["r0"]) ** 2, axis=1))
        if "mean" in truth:
            means = []
            for row, d in zip(lam, nuis):
                fam = trace.family.copy()
                fam.set_nuisance(**d)
                means.append(fam.predict_transform(row).get("mean", row))
            out["rmse_mean"] = np.sqrt(np.mean((np.array(means) - truth["mean"]) ** 2, axis=1))
    if not out:
        raise ValidationError(f"no held-out metric is defined for {trace.model} without outcomes or truth")
    return out


def gengamma_variance(trace: ChainTrace) -> tuple[np.ndarray, float]:
    """Per-draw ``Var(log T | r) = sigma^2 trigamma(alpha)`` and its posterior mean."""
    if not isinstance(trace.family, AftGenGammaFamily):
        raise UnsupportedModelError("the variance of log time is defined for aft_gengamma only")
    v = trace.nuisance_array("sigma") ** 2 * trigamma(trace.nuisance_array("alpha"))
    return v, float(v.mean())
