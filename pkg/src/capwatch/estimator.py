"""Law of the danger estimate and the tracking metrics derived from it.

The estimate is the highest danger level at which any test passes. Tests
above the true latent level fail automatically, so the estimate never
overshoots; when every test fails it sits at the origin of the tested
range. For a piecewise-constant rate the distribution function is a
product of per-piece exponentials, and every metric below (mean shortfall,
detection likelihood, miss probability, detection lag) has a closed form.
No quadrature is used on these paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .sensitivity import RateFunction

__all__ = [
    "Bias",
    "EstimatorDistribution",
    "LagLaw",
    "ThresholdMetrics",
    "lag_law",
    "miss_probability",
    "threshold_metrics",
]


class Bias(NamedTuple):
    """Signed tracking error of the mean estimate, and its magnitude."""

    signed: float
    magnitude: float


@dataclass(frozen=True)
class EstimatorDistribution:
    """Distribution of the highest passing test at a given latent level.

    Continuous on ``(y0, latent_level)`` with a point mass at ``y0`` (the
    no-pass outcome) and cdf exactly 1 at and above the latent level.
    """

    rate: RateFunction
    latent_level: float

    def __post_init__(self):
        object.__setattr__(self, "latent_level", float(self.latent_level))
        self.rate.require_valid()
        if self.latent_level < self.rate.y0:
            raise ValueError("latent level below the origin of the tested range")

    @cached_property
    def _cap(self) -> float:
        # no tests exist above y_max, so the support stops there even when
        # the latent level runs beyond the tested range
        return min(self.latent_level, self.rate.y_max)

    @cached_property
    def _total(self) -> float:
        return self.rate.cumulative(self._cap)

    @cached_property
    def _support(self):
        edges, rates = self.rate.pieces_between(self.rate.y0, self._cap)
        cdf_at_edges = np.exp(self.rate.cumulative(edges) - self._total)
        return edges, rates, cdf_at_edges

    def cdf(self, y):
        """P(estimate <= y)."""
        arr = np.asarray(y, dtype=float)
        if np.any(arr < self.rate.y0):
            raise ValueError("query below the origin of the tested range")
        capped = np.minimum(arr, self._cap)
        out = np.exp(self.rate.cumulative(capped) - self._total)
        return float(out) if np.ndim(y) == 0 else out

    def point_mass(self) -> float:
        """Probability that no test passes and the estimate stays at the origin."""
        return float(np.exp(-self._total))

    def pdf(self, y):
        """Density of the continuous part: cdf(y) times the rate at y.

        Defined on the open interval between the origin and the latent
        level; zero wherever the suite has no tests.
        """
        arr = np.asarray(y, dtype=float)
        if np.any(arr <= self.rate.y0) or np.any(arr >= self.latent_level):
            raise ValueError(
                "density is defined strictly between the origin and the latent level"
            )
        inside = arr <= self.rate.y_max
        eff_rate = np.where(
            inside, self.rate.rate_at(np.minimum(arr, self.rate.y_max)), 0.0
        )
        out = np.exp(self.rate.cumulative(np.minimum(arr, self._cap)) - self._total)
        out = out * eff_rate
        return float(out) if np.ndim(y) == 0 else out

    def mean(self) -> float:
        """Expected estimate; lies between the origin and the latent level."""
        y0 = self.rate.y0
        if self._cap <= y0:
            return y0
        edges, rates = self.rate.pieces_between(y0, self._cap)
        widths = np.diff(edges)
        mass = rates * widths
        # integral of the rate from each piece's top up to the cap
        above = np.concatenate([np.cumsum(mass[::-1])[::-1][1:], [0.0]])
        safe = np.where(rates > 0, rates, 1.0)
        local = np.where(rates > 0, -np.expm1(-mass) / safe, widths)
        area = float(np.sum(np.exp(-above) * local))
        if self.latent_level > self.rate.y_max:
            area += self.latent_level - self.rate.y_max
        return self.latent_level - area

    def bias(self) -> Bias:
        """Mean tracking error; the estimate can only lag the truth."""
        m = self.mean()
        return Bias(signed=m - self.latent_level, magnitude=self.latent_level - m)

    def bias_magnitude(self) -> float:
        return self.latent_level - self.mean()

    def detection_likelihood(self, threshold: float) -> float:
        """Chance the estimate flags a crossing of ``threshold``.

        Zero while the latent level is still below the threshold, since
        the estimate never overshoots.
        """
        if threshold < self.rate.y0:
            raise ValueError("threshold below the origin of the tested range")
        if self.latent_level < threshold:
            return 0.0
        return 1.0 - self.cdf(threshold)

    def quantile(self, u):
        """Smallest level whose cdf reaches ``u`` (inverse transform)."""
        arr = np.asarray(u, dtype=float)
        if np.any((arr < 0) | (arr > 1)):
            raise ValueError("probability outside [0, 1]")
        y0 = self.rate.y0
        if self._cap <= y0:
            out = np.full_like(arr, y0)
            return float(out) if np.ndim(u) == 0 else out
        edges, rates, F = self._support
        j = np.clip(np.searchsorted(F, arr, side="left"), 1, len(edges) - 1)
        k = rates[j - 1]
        safe = np.where(k > 0, k, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            offset = np.where(k > 0, np.log(arr / F[j]) / safe, 0.0)
        out = np.where(arr <= F[0], y0, edges[j] + offset)
        return float(out) if np.ndim(u) == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-transform draws; deterministic for a given generator state."""
        return self.quantile(rng.random(size))


def miss_probability(rate: RateFunction, threshold: float) -> float:
    """Chance a threshold crossing is never flagged anywhere in the tested range.

    The complement of ever seeing a passing test above the threshold, once
    the latent level has swept the whole range.
    """
    rate.require_valid()
    if not rate.y0 <= threshold <= rate.y_max:
        raise ValueError("threshold outside the tested range")
    return float(np.exp(-(rate.cumulative(rate.y_max) - rate.cumulative(threshold))))


@dataclass(frozen=True)
class LagLaw:
    """First-detection law for the danger gap above a threshold.

    The gap is the level of the lowest passing test above the threshold,
    minus the threshold. With probability ``miss_probability`` no test
    above the threshold ever passes and the gap is undefined.
    """

    rate: RateFunction
    threshold: float
    miss_probability: float
    conditional_mean_gap: float | None
    growth: object | None = None

    @property
    def always_missed(self) -> bool:
        return self.miss_probability >= 1.0

    @property
    def gap_upper(self) -> float:
        return self.rate.y_max - self.threshold

    def survival(self, gap):
        """P(detection gap > gap); flattens at the miss probability."""
        arr = np.asarray(gap, dtype=float)
        base = self.rate.cumulative(self.threshold)
        level = np.minimum(self.threshold + np.maximum(arr, 0.0), self.rate.y_max)
        out = np.where(
            arr >= self.gap_upper,
            self.miss_probability,
            np.exp(base - self.rate.cumulative(level)),
        )
        out = np.where(arr < 0, 1.0, out)
        return float(out) if np.ndim(gap) == 0 else out

    def density(self, gap):
        """Density of the detected gap: rate just above the point times survival."""
        arr = np.asarray(gap, dtype=float)
        inside = (arr >= 0) & (arr < self.gap_upper)
        probe = self.threshold + np.where(
            arr > 0, arr, self.gap_upper * 1e-12 + np.finfo(float).tiny
        )
        probe = np.minimum(probe, self.rate.y_max)
        out = np.where(inside, self.rate.rate_at(probe) * self.survival(arr), 0.0)
        return float(out) if np.ndim(gap) == 0 else out

    def conditional_mean_time(self) -> float | None:
        """Expected detection lag in time steps, given detection.

        Maps the danger gap through the inverse trajectory. Exact for
        linear growth (identity under unit increments); for other growth
        kinds the pushforward survival is integrated on a dense grid.
        """
        if self.conditional_mean_gap is None:
            return None
        if self.growth is None:
            return self.conditional_mean_gap
        if isinstance(self.growth, (int, float)):
            return self.conditional_mean_gap / float(self.growth) if self.growth > 0 else None
        if getattr(self.growth, "kind", None) == "linear":
            if self.growth.increment <= 0:
                return None
            return self.conditional_mean_gap / self.growth.increment
        t_star = self.growth.time_to_reach(self.threshold)
        t_top = self.growth.time_to_reach(self.rate.y_max)
        if not math.isfinite(t_star) or not math.isfinite(t_top):
            return None
        times = np.linspace(0.0, t_top - t_star, 4097)
        gaps = self.growth.level(t_star + times) - self.threshold
        surv = self.survival(gaps)
        area = float(np.trapezoid(surv - self.miss_probability, times))
        return area / (1.0 - self.miss_probability)


def lag_law(rate: RateFunction, threshold: float, growth=None) -> LagLaw:
    """First-detection law of the gap above ``threshold``.

    Closed-form conditional mean: per piece above the threshold, the gap
    integrates an exponential against the entry survival.
    """
    rate.require_valid()
    if not rate.y0 <= threshold < rate.y_max:
        raise ValueError("threshold must sit below the top of the tested range")
    c = miss_probability(rate, threshold)
    if c >= 1.0:
        return LagLaw(rate, threshold, c, None, growth)
    edges, rates = rate.pieces_between(threshold, rate.y_max)
    widths = np.diff(edges)
    mass = rates * widths
    entry_survival = np.exp(-np.concatenate([[0.0], np.cumsum(mass)]))[:-1]
    offsets = edges[:-1] - threshold
    decay = np.exp(-mass)
    safe = np.where(rates > 0, rates, 1.0)
    per_piece = np.where(
        rates > 0,
        offsets * -np.expm1(-mass) + (1.0 - decay * (1.0 + mass)) / safe,
        0.0,
    )
    mean_gap = float(np.sum(entry_survival * per_piece)) / (1.0 - c)
    return LagLaw(rate, threshold, c, mean_gap, growth)


@dataclass(frozen=True)
class ThresholdMetrics:
    """Bundle of threshold-tracking quantities for one suite and threshold."""

    threshold: float
    miss_probability: float
    expected_lag_conditional: float | None
    detection_likelihood_at: Callable


def threshold_metrics(rate: RateFunction, threshold: float, growth=None) -> ThresholdMetrics:
    """Miss probability, conditional lag, and the detection curve over latent levels."""
    rate.require_valid()
    if not rate.y0 <= threshold <= rate.y_max:
        raise ValueError("threshold outside the tested range")
    c = miss_probability(rate, threshold)
    lag = None
    if threshold < rate.y_max:
        lag = lag_law(rate, threshold, growth).conditional_mean_gap
    base = rate.cumulative(threshold)

    def detection_likelihood_at(levels):
        arr = np.asarray(levels, dtype=float)
        if np.any(arr < rate.y0):
            raise ValueError("latent level below the origin of the tested range")
        capped = np.minimum(arr, rate.y_max)
        out = np.where(arr < threshold, 0.0, -np.expm1(base - rate.cumulative(capped)))
        return float(out) if np.ndim(levels) == 0 else out

    return ThresholdMetrics(threshold, c, lag, detection_likelihood_at)
