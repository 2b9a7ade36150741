"""Capability growth paths and the step-by-step estimate update chain.

Between consecutive steps the latent danger level rises and the tests in
the newly reachable band get their first chance to fire (plus any tests
added mid-run below it). The estimate therefore either stays put, with
probability equal to the new distribution's cdf at the sampling floor, or
jumps to a draw from the part of the new distribution above the floor.
Chaining these updates with a fixed suite reproduces the one-shot law at
every step, which is the main consistency check on the whole construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimator import EstimatorDistribution
from .sensitivity import RateFunction

__all__ = [
    "CapabilityTrajectory",
    "ChainEnsemble",
    "EstimateChainState",
    "advance",
    "run_chain",
]

_KINDS = ("linear", "s-curve", "piecewise-jump")


@dataclass(frozen=True)
class CapabilityTrajectory:
    """Latent danger level as a function of the time step.

    ``linear`` grows by a constant increment per step, ``s-curve`` is a
    logistic ramp from ``start`` toward ``ceiling``, ``piecewise-jump``
    holds a level until the next scheduled jump. Levels never decrease.
    """

    kind: str
    horizon: int
    start: float = 0.0
    increment: float = 1.0
    ceiling: float | None = None
    midpoint: float | None = None
    steepness: float | None = None
    jumps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(
            self, "jumps", tuple((float(t), float(v)) for t, v in self.jumps)
        )
        if self.kind not in _KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must cover at least one step")
        if self.kind == "linear" and self.increment < 0:
            raise ValueError("a shrinking trajectory is not supported")
        if self.kind == "s-curve":
            if self.ceiling is None or self.midpoint is None or self.steepness is None:
                raise ValueError("s-curve needs ceiling, midpoint and steepness")
            if self.ceiling <= self.start:
                raise ValueError("s-curve ceiling must exceed the start level")
            if self.steepness <= 0:
                raise ValueError("s-curve steepness must be positive")
        if self.kind == "piecewise-jump":
            prev_t, prev_v = -math.inf, self.start
            for t, v in self.jumps:
                if t <= prev_t or v < prev_v:
                    raise ValueError("jumps must come in time order and never lower the level")
                prev_t, prev_v = t, v

    @classmethod
    def linear(cls, start: float, increment: float, horizon: int) -> "CapabilityTrajectory":
        return cls(kind="linear", horizon=horizon, start=start, increment=increment)

    @classmethod
    def s_curve(
        cls, start: float, ceiling: float, midpoint: float, steepness: float, horizon: int
    ) -> "CapabilityTrajectory":
        return cls(
            kind="s-curve",
            horizon=horizon,
            start=start,
            ceiling=ceiling,
            midpoint=midpoint,
            steepness=steepness,
        )

    @classmethod
    def piecewise_jump(cls, start: float, jumps, horizon: int) -> "CapabilityTrajectory":
        return cls(kind="piecewise-jump", horizon=horizon, start=start, jumps=tuple(jumps))

    @classmethod
    def from_dict(cls, data: dict) -> "CapabilityTrajectory":
        return cls(
            kind=data.get("kind", "linear"),
            horizon=data.get("horizon", 1),
            start=data.get("start", 0.0),
            increment=data.get("increment", 1.0),
            ceiling=data.get("ceiling"),
            midpoint=data.get("midpoint"),
            steepness=data.get("steepness"),
            jumps=tuple(tuple(j) for j in data.get("jumps", ())),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "horizon": self.horizon, "start": self.start}
        if self.kind == "linear":
            out["increment"] = self.increment
        elif self.kind == "s-curve":
            out.update(
                ceiling=self.ceiling, midpoint=self.midpoint, steepness=self.steepness
            )
        else:
            out["jumps"] = [list(j) for j in self.jumps]
        return out

    def level(self, t):
        """Latent level at (possibly fractional) step ``t``."""
        arr = np.asarray(t, dtype=float)
        if self.kind == "linear":
            out = self.start + self.increment * arr
        elif self.kind == "s-curve":
            out = self.start + (self.ceiling - self.start) / (
                1.0 + np.exp(-self.steepness * (arr - self.midpoint))
            )
        else:
            times = np.array([j[0] for j in self.jumps])
            values = np.array([self.start] + [j[1] for j in self.jumps])
            out = values[np.searchsorted(times, arr, side="right")]
        return float(out) if np.ndim(t) == 0 else out

    def levels(self) -> np.ndarray:
        return self.level(np.arange(self.horizon + 1))

    def time_to_reach(self, target: float) -> float:
        """First (fractional) step at which the level reaches ``target``.

        May exceed the horizon for linear growth; ``inf`` when the path
        never gets there.
        """
        if target <= self.level(0):
            return 0.0
        if self.kind == "linear":
            if self.increment <= 0:
                return math.inf
            return (target - self.start) / self.increment
        if self.kind == "s-curve":
            if target >= self.ceiling:
                return math.inf
            ratio = (self.ceiling - self.start) / (target - self.start) - 1.0
            return self.midpoint - math.log(ratio) / self.steepness
        for t, v in self.jumps:
            if v >= target:
                return float(t)
        return math.inf


@dataclass(frozen=True)
class EstimateChainState:
    """One chain's position: time step, latent level, current estimate."""

    step: int
    latent: float
    estimate: float
    detected_step: int | None = None


def advance(
    state: EstimateChainState,
    rate_next: RateFunction,
    y_next: float,
    rng: np.random.Generator,
    *,
    new_test_floor: float | None = None,
    mode: str = "main",
    threshold: float | None = None,
) -> EstimateChainState:
    """One update of the estimate chain to latent level ``y_next``.

    In the main mode the sampling floor is the old latent level, lowered
    to the new-test floor when tests were added below it; the alternative
    mode re-opens everything above the current estimate instead. The same
    uniform drives the keep-or-sample choice and the inverse-transform
    draw, so runs with shared generators are coupled.
    """
    if y_next < state.latent:
        raise ValueError("latent level cannot shrink")
    if new_test_floor is not None and new_test_floor < state.estimate:
        raise ValueError("new-test floor below the current estimate")
    if mode not in ("main", "alternative"):
        raise ValueError(f"unknown chain mode {mode!r}")
    dist = EstimatorDistribution(rate_next, y_next)
    if mode == "main":
        floor = state.latent if new_test_floor is None else min(new_test_floor, state.latent)
    else:
        floor = state.estimate
    u = rng.random()
    if u <= dist.cdf(floor):
        estimate = state.estimate
    else:
        estimate = float(dist.quantile(u))
    detected = state.detected_step
    if detected is None and threshold is not None and estimate > threshold:
        detected = state.step + 1
    return EstimateChainState(state.step + 1, float(y_next), estimate, detected)


@dataclass(frozen=True)
class ChainEnsemble:
    """Ensemble of estimate paths plus per-step empirical tracking metrics."""

    threshold: float
    levels: np.ndarray
    estimates: np.ndarray
    mean_estimate: np.ndarray
    bias_magnitude: np.ndarray
    detection_likelihood: np.ndarray
    miss_rate: float
    lag_samples: np.ndarray
    detected_step: np.ndarray

    @property
    def conditional_lag(self) -> float | None:
        if self.lag_samples.size == 0:
            return None
        return float(self.lag_samples.mean())


def _per_path_uniforms(seed, n_paths: int, n_steps: int) -> np.ndarray:
    """Uniforms for every path from its own (seed, path-index) generator.

    Path i consumes only row i, so aggregates cannot depend on how paths
    are scheduled or batched.
    """
    out = np.empty((n_paths, n_steps, 2))
    for i in range(n_paths):
        child = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        out[i] = child.random((n_steps, 2))
    return out


def _first_pass_above(
    rate: RateFunction, lower: np.ndarray, upper: float, v: np.ndarray
) -> np.ndarray:
    """Level of the lowest firing test on ``(lower, upper]`` given at least one.

    Inverse transform of the conditional first-arrival survival; used to
    read off the detection gap at the step where the estimate first
    clears the threshold.
    """
    q_low = rate.cumulative(lower)
    q_up = rate.cumulative(upper)
    none_fire = np.exp(q_low - q_up)
    target = 1.0 - v * (1.0 - none_fire)
    levels = rate.level_at_cumulative(q_low - np.log(target))
    return np.maximum(levels, lower)


def run_chain(
    trajectory: CapabilityTrajectory,
    rate_schedule,
    threshold: float,
    *,
    n_paths: int,
    seed,
    mode: str = "main",
) -> ChainEnsemble:
    """Simulate ``n_paths`` estimate chains along the trajectory.

    ``rate_schedule`` is a single suite or one per step (length
    horizon + 1); consecutive entries may add tests mid-run, which lowers
    the sampling floor accordingly. The initial estimate is a one-shot
    draw at the starting level, so per-step marginals match the static
    law whenever the suite is fixed.
    """
    if mode not in ("main", "alternative"):
        raise ValueError(f"unknown chain mode {mode!r}")
    if n_paths < 1:
        raise ValueError("need at least one path")
    steps = trajectory.horizon
    if isinstance(rate_schedule, RateFunction):
        rates = [rate_schedule] * (steps + 1)
    else:
        rates = list(rate_schedule)
        if len(rates) < steps + 1:
            raise ValueError("rate schedule shorter than the horizon")
    levels = trajectory.levels()
    for r in rates[: steps + 1]:
        r.require_valid()
        if levels[-1] > r.y_max or levels[0] < r.y0:
            raise ValueError("trajectory leaves the tested range")

    dists = [EstimatorDistribution(rates[t], levels[t]) for t in range(steps + 1)]
    changed_from = [None] + [
        rates[t].lowest_difference(rates[t - 1]) for t in range(1, steps + 1)
    ]
    uniforms = _per_path_uniforms(seed, n_paths, steps + 1)

    estimates = np.empty((n_paths, steps + 1))
    detected_step = np.full(n_paths, -1)
    lag_values = np.full(n_paths, np.nan)

    est = dists[0].quantile(uniforms[:, 0, 0])
    estimates[:, 0] = est
    fresh = est > threshold
    if fresh.any():
        detected_step[fresh] = 0
        lower = np.full(int(fresh.sum()), float(threshold))
        lag_values[fresh] = (
            _first_pass_above(rates[0], lower, float(levels[0]), uniforms[fresh, 0, 1])
            - threshold
        )

    for t in range(1, steps + 1):
        prev_level = float(levels[t - 1])
        if mode == "main":
            c = changed_from[t]
            if c is None:
                floors = np.full(n_paths, prev_level)
            else:
                floors = np.minimum(np.maximum(c, est), prev_level)
        else:
            floors = est.copy()
        keep_prob = dists[t].cdf(floors)
        u = uniforms[:, t, 0]
        jump = u > keep_prob
        if jump.any():
            est = est.copy()
            est[jump] = dists[t].quantile(u[jump])
        estimates[:, t] = est
        fresh = (est > threshold) & (detected_step < 0)
        if fresh.any():
            lower = np.maximum(floors[fresh], threshold)
            lag_values[fresh] = (
                _first_pass_above(rates[t], lower, float(levels[t]), uniforms[fresh, t, 1])
                - threshold
            )
            detected_step[fresh] = t

    mean_estimate = estimates.mean(axis=0)
    return ChainEnsemble(
        threshold=float(threshold),
        levels=levels,
        estimates=estimates,
        mean_estimate=mean_estimate,
        bias_magnitude=levels - mean_estimate,
        detection_likelihood=(estimates >= threshold).mean(axis=0),
        miss_rate=float((detected_step < 0).mean()),
        lag_samples=lag_values[detected_step >= 0],
        detected_step=detected_step,
    )
