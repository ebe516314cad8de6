"""Datasets, covariate scaling, CSV ingestion and the benchmark simulators."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .special import logistic, reg_upper_inc_gamma


@dataclass
class Scaling:
    """Per-column map from original covariates onto ``[0, 1]``.

    ``method="minmax"`` stores the column ranges; ``method="quantile"`` stores
    the sorted distinct training values and maps them to evenly spaced ranks.
    """

    method: str
    lower: np.ndarray
    upper: np.ndarray
    knots: list = field(default_factory=list)

    @classmethod
    def fit(cls, X: np.ndarray, method: str = "minmax") -> "Scaling":
        if method not in ("minmax", "quantile"):
            raise ValidationError(f"unknown scaling method {method!r}")
        knots = [np.unique(col) for col in X.T] if method == "quantile" else []
        return cls(method, X.min(axis=0), X.max(axis=0), knots)

    def transform(self, X: np.ndarray, clip: bool = True) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            lo, hi = self.lower[j], self.upper[j]
            if hi == lo:
                out[:, j] = 0.5
            elif self.method == "minmax":
                out[:, j] = (X[:, j] - lo) / (hi - lo)
            else:
                k = self.knots[j]
                out[:, j] = np.interp(X[:, j], k, np.linspace(0.0, 1.0, len(k)))
        return np.clip(out, 0.0, 1.0) if clip else out

    def inverse(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        out = np.empty_like(U)
        for j in range(U.shape[1]):
            lo, hi = self.lower[j], self.upper[j]
            if hi == lo:
                out[:, j] = lo
            elif self.method == "minmax":
                out[:, j] = lo + U[:, j] * (hi - lo)
            else:
                k = self.knots[j]
                out[:, j] = np.interp(U[:, j], np.linspace(0.0, 1.0, len(k)), k)
        return out


@dataclass
class Dataset:
    """Covariates on the unit cube with outcomes and optional event indicators."""

    X: np.ndarray
    y: np.ndarray | None = None
    delta: np.ndarray | None = None
    scaling: Scaling | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not np.all((self.X >= 0.0) & (self.X <= 1.0)):
            raise ValidationError("covariates must lie in [0, 1]; rescale them first")
        n = self.X.shape[0]
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape != (n,):
                raise ValidationError(f"y has shape {self.y.shape}, expected ({n},)")
        if self.delta is not None:
            self.delta = np.asarray(self.delta, dtype=float)
            if self.delta.shape != (n,):
                raise ValidationError(f"delta has shape {self.delta.shape}, expected ({n},)")
            if not np.all((self.delta == 0) | (self.delta == 1)):
                raise ValidationError("delta must be 0 or 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


# ---------------------------------------------------------------------------
# CSV files


_XCOL = re.compile(r"^x(\d+)$")


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"row {row}, column {col!r}: {text!r} is not numeric") from None


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a headed numeric CSV into ``(header, matrix)``; rows are numbered from 1 after the header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = []
        for i, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            rows.append([_parse_float(v.strip(), i, header[k]) for k, v in enumerate(row)])
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def load_dataset(
    path: str | Path,
    require_y: bool = True,
    require_delta: bool = False,
    scaling: Scaling | None = None,
    scaling_method: str = "minmax",
) -> Dataset:
    """Load ``x1..xP[, y][, delta]`` columns and rescale covariates to ``[0, 1]``.

    When ``scaling`` is given (e.g. the training record at prediction time) it
    is reused, otherwise a new one is fitted to this file.
    """
    header, table = read_table(path)
    xcols = sorted((int(m.group(1)), i) for i, h in enumerate(header) if (m := _XCOL.match(h)))
    if not xcols:
        raise ValidationError(f"{path}: no covariate columns x1..xP")
    expected = list(range(1, len(xcols) + 1))
    if [k for k, _ in xcols] != expected:
        raise ValidationError(f"{path}: covariate columns must be x1..x{len(xcols)} without gaps")
    X_raw = table[:, [i for _, i in xcols]]

    y = delta = None
    if "y" in header:
        y = table[:, header.index("y")]
    elif require_y:
        raise ValidationError(f"{path}: missing outcome column 'y'")
    if "delta" in header:
        delta = table[:, header.index("delta")]
        bad = np.flatnonzero((delta != 0) & (delta != 1))
        if bad.size:
            raise ValidationError(f"{path}: row {bad[0] + 1}, column 'delta': must be 0 or 1")
    elif require_delta:
        raise ValidationError(f"{path}: missing event-indicator column 'delta'")

    if scaling is None:
        scaling = Scaling.fit(X_raw, scaling_method)
    elif len(scaling.lower) != X_raw.shape[1]:
        raise ValidationError(f"{path}: has {X_raw.shape[1]} covariates, the model expects {len(scaling.lower)}")
    return Dataset(scaling.transform(X_raw), y, delta, scaling)


def format_float(value: float) -> str:
    return f"{value:.17g}"


def write_table(path: str | Path, header: list[str], columns: list) -> None:
    columns = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([format_float(float(v)) for v in row])


def save_dataset(path: str | Path, data: Dataset) -> None:
    header = [f"x{j + 1}" for j in range(data.p)]
    cols = list(data.X.T)
    if data.y is not None:
        header.append("y")
        cols.append(data.y)
    if data.delta is not None:
        header.append("delta")
        cols.append(data.delta)
    write_table(path, header, cols)


# ---------------------------------------------------------------------------
# Simulators


def friedman(x) -> np.ndarray | float:
    """Benchmark surface ``10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5``.

    Accepts a single point or an ``(N, P)`` matrix; columns beyond the fifth
    are ignored.
    """
    X = np.asarray(x, dtype=float)
    if X.shape[-1] < 5:
        raise ValidationError("the Friedman function needs at least 5 predictors")
    out = (10.0 * np.sin(np.pi * X[..., 0] * X[..., 1]) + 20.0 * (X[..., 2] - 0.5) ** 2
           + 10.0 * X[..., 3] + 5.0 * X[..., 4])
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Scenario:
    name: str
    model: str
    n: int
    p: int


SCENARIOS = {
    "friedman_gaussian": Scenario("friedman_gaussian", "gaussian", 500, 20),
    "friedman_logistic": Scenario("friedman_logistic", "logistic", 500, 20),
    "friedman_hetpoisson": Scenario("friedman_hetpoisson", "hetvar", 500, 10),
    "friedman_aft_loglogistic": Scenario("friedman_aft_loglogistic", "aft_loglogistic", 500, 10),
    "friedman_aft_gengamma": Scenario("friedman_aft_gengamma", "aft_gengamma", 500, 10),
    "friedman_gammashape": Scenario("friedman_gammashape", "gamma_shape", 100, 10),
}

#: Ground-truth nuisance values used by the simulators.
TRUE_AFT_SIGMA = 1.0
TRUE_GENGAMMA_ALPHA = 1.0
TRUE_GAMMA_RATE = 1.0


def _aft_error(name: str, rng: np.random.Generator, n: int) -> np.ndarray:
    if name == "friedman_aft_loglogistic":
        return rng.logistic(size=n)
    g = rng.gamma(TRUE_GENGAMMA_ALPHA, 1.0 / TRUE_GENGAMMA_ALPHA, size=n)
    return np.log(g)


def simulate_at(name: str, X: np.ndarray, rng: np.random.Generator) -> tuple[Dataset, dict]:
    """Draw outcomes for scenario ``name`` at fixed covariates ``X``."""
    if name not in SCENARIOS:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    n = X.shape[0]
    rf = friedman(X)
    delta = None
    if name == "friedman_gaussian":
        r0 = rf
        truth = {"r0": r0, "mean": r0}
        y = r0 + rng.standard_normal(n)
    elif name == "friedman_logistic":
        r0 = (rf - 14.0) / 5.0
        truth = {"r0": r0, "prob": logistic(r0)}
        y = (rng.random(n) < truth["prob"]).astype(float)
    elif name == "friedman_hetpoisson":
        r0 = 2.0 + (rf - 14.0) / 5.0
        truth = {"r0": r0, "mean": np.exp(r0)}
        y = rng.poisson(truth["mean"]).astype(float)
    elif name == "friedman_gammashape":
        r0 = 2.0 + (rf - 14.0) / 5.0
        truth = {"r0": r0, "shape": np.exp(r0)}
        y = rng.gamma(np.exp(r0), 1.0 / TRUE_GAMMA_RATE)
    else:
        r0 = (rf - 14.0) / 5.0
        # event and censoring times are exchangeable given X, so half are censored
        t_event = np.exp(r0 + TRUE_AFT_SIGMA * _aft_error(name, rng, n))
        t_censor = np.exp(r0 + TRUE_AFT_SIGMA * _aft_error(name, rng, n))
        y = np.minimum(t_event, t_censor)
        delta = (t_event <= t_censor).astype(float)
        truth = {"r0": r0}
    return Dataset(X, y, delta), truth


def simulate(name: str, rng: np.random.Generator, n: int | None = None,
             p: int | None = None) -> tuple[Dataset, dict]:
    """Simulate scenario ``name`` with ``X ~ Uniform[0, 1]^P``."""
    if name not in SCENARIOS:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    sc = SCENARIOS[name]
    n = sc.n if n is None else n
    p = sc.p if p is None else p
    if p < 5:
        raise ValidationError("scenarios need at least 5 predictors")
    X = rng.random((n, p))
    return simulate_at(name, X, rng)


def true_survival(name: str, t, r0) -> np.ndarray:
    """True ``P(T > t | r0)`` for the AFT scenarios."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        z = (np.log(t) - r0) / TRUE_AFT_SIGMA
    if name == "friedman_aft_loglogistic":
        return logistic(-z)
    if name == "friedman_aft_gengamma":
        a = TRUE_GENGAMMA_ALPHA
        return reg_upper_inc_gamma(np.full(np.shape(z), a), a * np.exp(np.minimum(z, 700.0)))
    raise ValidationError(f"{name} is not a survival scenario")
