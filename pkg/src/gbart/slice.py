"""Univariate slice sampling with stepping out and shrinkage."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

MAX_SHRINKS = 500


def slice_sample(
    x0: float,
    log_target: Callable[[float], float],
    width: float,
    rng: np.random.Generator,
    max_steps: int = 50,
    log_target_x0: float | None = None,
    lower: float = -math.inf,
    upper: float = math.inf,
) -> tuple[float, float]:
    """One stepping-out slice update of ``x0`` targeting ``exp(log_target)``.

    The interval is stepped out at most ``max_steps`` times on each side and
    clipped to ``(lower, upper)``.  Returns the new point and its log target.
    """
    fx0 = log_target(x0) if log_target_x0 is None else log_target_x0
    if not np.isfinite(fx0):
        raise ValueError(f"slice sampler started at a point with log density {fx0}")
    level = fx0 + math.log(rng.random())

    left = x0 - width * rng.random()
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and left > lower and log_target(left) > level:
        left -= width
        j -= 1
    while k > 0 and right < upper and log_target(right) > level:
        right += width
        k -= 1
    left = max(left, lower)
    right = min(right, upper)

    for _ in range(MAX_SHRINKS):
        x1 = left + (right - left) * rng.random()
        fx1 = log_target(x1)
        if fx1 > level:
            return x1, fx1
        if x1 < x0:
            left = x1
        else:
            right = x1
    return x0, fx0


def log_half_cauchy(x: float, scale: float) -> float:
    """Log density of the half-Cauchy(0, scale) distribution at ``x > 0``."""
    if x <= 0:
        return -math.inf
    return math.log(2.0 / (math.pi * scale)) - math.log1p((x / scale) ** 2)
