"""Shared test utilities: random suites, a KS statistic, exact grid means."""

from __future__ import annotations

import numpy as np

from capwatch.oracle import GridTestModel
from capwatch.sensitivity import RateFunction


def random_rate(rng: np.random.Generator, max_segments: int = 5) -> RateFunction:
    """A random piecewise suite, with occasional zero-rate gaps and tails."""
    n = int(rng.integers(1, max_segments + 1))
    widths = rng.uniform(0.3, 3.0, size=n)
    endpoints = np.cumsum(widths)
    rates = rng.uniform(0.05, 3.0, size=n)
    rates[rng.random(n) < 0.25] = 0.0
    if rates.max() == 0.0:
        rates[int(rng.integers(0, n))] = float(rng.uniform(0.5, 2.0))
    y_max = float(endpoints[-1])
    if rng.random() < 0.3:
        y_max += float(rng.uniform(0.2, 2.0))
    return RateFunction(
        endpoints=tuple(endpoints), rates=tuple(rates), y_max=y_max
    )


def discrete_mean(model: GridTestModel) -> float:
    """Exact mean of the grid's reported level, straight from cell probs."""
    q = 1.0 - model.pass_probs
    tail = np.append(np.cumprod(q[::-1])[::-1][1:], 1.0)
    p_sup = model.pass_probs * tail
    return float(np.sum(model.levels * p_sup) + model.rate.y0 * np.prod(q))


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance of samples against a cdf callable.

    Valid for laws with atoms: compares the cdf against the empirical
    step from both sides at every sample point.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    upper = np.abs(np.arange(1, n + 1) / n - f)
    lower = np.abs(np.arange(0, n) / n - f)
    return float(np.maximum(upper, lower).max())
