"""Budget schedules, placement policies, and coupled suite-building runs.

Each step a budget is split across danger bands, converted into rate
increments by a linear production function, and merged into the suite
before the estimate chain advances. The next step's placement sees the
updated estimate, which is what couples test quality to tracking quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .dynamics import CapabilityTrajectory, EstimateChainState, advance
from .estimator import EstimatorDistribution
from .sensitivity import RateFunction

__all__ = [
    "AllocationPlan",
    "AllocationPolicy",
    "BudgetSchedule",
    "Evolution",
    "NormalForecast",
    "ProductionFunction",
    "allocate",
    "dynamic_miss_probability",
    "evolve_rate_schedule",
    "required_budget",
]

_BUDGET_KINDS = ("constant", "exponential-decay", "custom")
_POLICY_KINDS = ("frontier-tracking", "threshold-focused", "balanced")


@dataclass(frozen=True)
class BudgetSchedule:
    """Per-step evaluation budget, optionally starting after a delay."""

    kind: str = "constant"
    amount: float = 1.0
    decay: float = 0.0
    amounts: tuple[float, ...] = ()
    delay: int = 0

    def __post_init__(self):
        object.__setattr__(self, "amounts", tuple(float(a) for a in self.amounts))
        if self.kind not in _BUDGET_KINDS:
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.amount < 0 or self.decay < 0 or self.delay < 0:
            raise ValueError("budget parameters must be non-negative")
        if any(a < 0 for a in self.amounts):
            raise ValueError("budget parameters must be non-negative")

    def budget_at(self, step: int) -> float:
        if step < self.delay:
            return 0.0
        offset = step - self.delay
        if self.kind == "constant":
            return self.amount
        if self.kind == "exponential-decay":
            return self.amount * math.exp(-self.decay * offset)
        return self.amounts[offset] if offset < len(self.amounts) else 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "BudgetSchedule":
        return cls(
            kind=data.get("kind", "constant"),
            amount=data.get("amount", 1.0),
            decay=data.get("decay", 0.0),
            amounts=tuple(data.get("amounts", ())),
            delay=data.get("delay", 0),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "amount": self.amount, "delay": self.delay}
        if self.kind == "exponential-decay":
            out["decay"] = self.decay
        if self.kind == "custom":
            out["amounts"] = list(self.amounts)
        return out


@dataclass(frozen=True)
class NormalForecast:
    """Normal belief over the next-step danger increment."""

    mean: float = 1.0
    std: float = 0.5
    quantile: float = 0.9

    def __post_init__(self):
        if self.std <= 0 or not 0 < self.quantile < 1:
            raise ValueError("forecast needs a positive std and a quantile in (0, 1)")

    def upper_increment(self) -> float:
        """Increment the frontier band should cover to catch likely jumps."""
        return NormalDist(self.mean, self.std).inv_cdf(self.quantile)


@dataclass(frozen=True)
class AllocationPolicy:
    """How each step's budget lands on danger bands.

    ``frontier-tracking`` follows the current estimate, ``threshold-focused``
    parks everything just above the danger threshold, ``balanced`` splits
    the budget between the two bands by ``threshold_weight``.
    """

    kind: str
    lookahead: float = 1.0
    threshold_weight: float = 0.5
    forecast: NormalForecast | None = None

    def __post_init__(self):
        if self.kind not in _POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")
        if not 0.0 <= self.threshold_weight <= 1.0:
            raise ValueError("threshold_weight must lie in [0, 1]")

    def frontier_reach(self) -> float:
        if self.forecast is not None:
            return max(self.forecast.upper_increment(), 0.0)
        return self.lookahead

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationPolicy":
        fc = data.get("forecast")
        return cls(
            kind=data.get("kind", "frontier-tracking"),
            lookahead=data.get("lookahead", 1.0),
            threshold_weight=data.get("threshold_weight", 0.5),
            forecast=None if fc is None else NormalForecast(**fc),
        )

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "lookahead": self.lookahead,
            "threshold_weight": self.threshold_weight,
        }
        if self.forecast is not None:
            out["forecast"] = {
                "mean": self.forecast.mean,
                "std": self.forecast.std,
                "quantile": self.forecast.quantile,
            }
        return out


@dataclass(frozen=True)
class ProductionFunction:
    """Linear map from budget to added detection rate on a band."""

    efficiency: float = 1.0

    def __post_init__(self):
        if self.efficiency <= 0:
            raise ValueError("efficiency must be positive")

    def produce(self, budget: float, lo: float, hi: float) -> float:
        """Rate increment bought on ``(lo, hi]``: efficiency * budget / width."""
        if hi <= lo:
            raise ValueError("empty production band")
        if budget < 0:
            raise ValueError("negative budget")
        return self.efficiency * budget / (hi - lo)


@dataclass(frozen=True)
class AllocationPlan:
    """One step's budget split across danger bands."""

    budget: float
    entries: tuple[tuple[float, float, float], ...]

    def total(self) -> float:
        return sum(amount for _, _, amount in self.entries)

    def lowest_funded_level(self) -> float | None:
        funded = [lo for lo, _, amount in self.entries if amount > 0]
        return min(funded) if funded else None

    def apply(self, rate: RateFunction, production: ProductionFunction) -> RateFunction:
        out = rate
        for lo, hi, amount in self.entries:
            if amount > 0:
                out = out.with_block(lo, hi, production.produce(amount, lo, hi))
        return out


def _snap_band(lo: float, hi: float, y0: float, y_max: float, grid: float):
    """Widen a band outward to grid multiples so suites stay small."""
    lo_s = y0 + math.floor((lo - y0) / grid + 1e-9) * grid
    hi_s = y0 + math.ceil((hi - y0) / grid - 1e-9) * grid
    lo_s = min(max(lo_s, y0), y_max - grid)
    hi_s = min(max(hi_s, lo_s + grid), y_max)
    return lo_s, hi_s


def allocate(
    policy: AllocationPolicy,
    budget: float,
    estimate_history,
    threshold: float,
    *,
    y0: float,
    y_max: float,
    grid: float = 0.1,
) -> AllocationPlan:
    """Split one step's budget into danger bands per the policy.

    The frontier band starts at the latest estimate (the origin before any
    estimate exists) and reaches ahead by the policy's lookahead or its
    forecast's upper quantile. Band edges snap to the grid; amounts are
    conserved exactly.
    """
    if budget < 0:
        raise ValueError("negative budget")
    history = list(estimate_history) if estimate_history is not None else []
    current = history[-1] if history else y0
    frontier = _snap_band(current, current + policy.frontier_reach(), y0, y_max, grid)
    near_threshold = _snap_band(threshold, threshold + policy.lookahead, y0, y_max, grid)
    if policy.kind == "frontier-tracking":
        entries = ((frontier[0], frontier[1], budget),)
    elif policy.kind == "threshold-focused":
        entries = ((near_threshold[0], near_threshold[1], budget),)
    else:
        to_threshold = policy.threshold_weight * budget
        entries = (
            (near_threshold[0], near_threshold[1], to_threshold),
            (frontier[0], frontier[1], budget - to_threshold),
        )
    return AllocationPlan(budget=budget, entries=entries)


@dataclass(frozen=True)
class Evolution:
    """One coupled build-and-test path with its per-step tracking series."""

    threshold: float
    rates: tuple[RateFunction, ...]
    levels: np.ndarray
    estimates: np.ndarray
    budgets: np.ndarray
    frontier_sensitivity: np.ndarray
    detection_likelihood: np.ndarray
    detected_step: int | None

    @property
    def bias_magnitude(self) -> np.ndarray:
        return self.levels - self.estimates


def _zero_rate(y0: float, y_max: float) -> RateFunction:
    return RateFunction(endpoints=(y_max,), rates=(0.0,), y_max=y_max, y0=y0)


def evolve_rate_schedule(
    schedule: BudgetSchedule,
    policy: AllocationPolicy,
    production: ProductionFunction,
    trajectory: CapabilityTrajectory,
    threshold: float,
    *,
    initial_rate: RateFunction | None = None,
    domain: tuple[float, float] | None = None,
    grid: float = 0.1,
    seed=0,
    mode: str = "main",
) -> Evolution:
    """Run one coupled path: allocate, build tests, advance the chain.

    Each step's allocation sees the estimate history so far; the resulting
    rate increments land before the latent level moves. The reported
    sensitivity series is the rate at the true level, step by step.
    """
    if initial_rate is None:
        if domain is None:
            raise ValueError("need an initial rate or an explicit (y0, y_max) domain")
        initial_rate = _zero_rate(*domain)
    initial_rate.require_valid()
    y0, y_max = initial_rate.y0, initial_rate.y_max
    levels = trajectory.levels()
    if levels[0] < y0 or levels[-1] > y_max:
        raise ValueError("trajectory leaves the tested range")
    rng = np.random.default_rng(seed)
    steps = trajectory.horizon

    rate = initial_rate
    rates = [rate]
    dist0 = EstimatorDistribution(rate, float(levels[0]))
    state = EstimateChainState(0, float(levels[0]), float(dist0.quantile(rng.random())))
    if state.estimate > threshold:
        state = EstimateChainState(0, state.latent, state.estimate, 0)
    estimates = [state.estimate]
    budgets = np.empty(steps)
    sensitivity = [rate.rate_at(float(levels[0]))]
    detection = [
        EstimatorDistribution(rate, float(levels[0])).detection_likelihood(threshold)
    ]

    for t in range(steps):
        budgets[t] = schedule.budget_at(t)
        plan = allocate(
            policy, budgets[t], estimates, threshold, y0=y0, y_max=y_max, grid=grid
        )
        new_rate = plan.apply(rate, production)
        changed_from = new_rate.lowest_difference(rate)
        floor = None if changed_from is None else max(changed_from, state.estimate)
        state = advance(
            state,
            new_rate,
            float(levels[t + 1]),
            rng,
            new_test_floor=floor,
            mode=mode,
            threshold=threshold,
        )
        rate = new_rate
        rates.append(rate)
        estimates.append(state.estimate)
        sensitivity.append(rate.rate_at(float(levels[t + 1])))
        detection.append(
            EstimatorDistribution(rate, float(levels[t + 1])).detection_likelihood(threshold)
        )

    return Evolution(
        threshold=float(threshold),
        rates=tuple(rates),
        levels=levels,
        estimates=np.asarray(estimates),
        budgets=budgets,
        frontier_sensitivity=np.asarray(sensitivity),
        detection_likelihood=np.asarray(detection),
        detected_step=state.detected_step,
    )


def dynamic_miss_probability(
    rates, trajectory: CapabilityTrajectory, threshold: float
) -> float:
    """Chance the chain never flags the crossing, for estimate-independent builds.

    Valid when newly added tests never land below the running estimate on
    undetected paths (true for threshold-anchored placement, whose bands
    start at the threshold). Under that condition the per-step
    no-detection factors multiply exactly, with each step contributing the
    new-rate mass above max(threshold, sampling floor).
    """
    levels = trajectory.levels()
    rates = list(rates)
    if len(rates) < len(levels):
        raise ValueError("rate schedule shorter than the horizon")
    log_miss = 0.0
    for t in range(len(levels) - 1):
        nxt = float(levels[t + 1])
        if nxt <= threshold:
            continue
        changed_from = rates[t + 1].lowest_difference(rates[t])
        if changed_from is None:
            lower = max(float(levels[t]), threshold)
        elif changed_from >= threshold:
            lower = max(min(changed_from, float(levels[t])), threshold)
        else:
            lower = threshold
        log_miss -= rates[t + 1].cumulative(nxt) - rates[t + 1].cumulative(lower)
    return float(math.exp(log_miss))


def _threshold_build(
    budget: float,
    delay: int,
    policy: AllocationPolicy,
    production: ProductionFunction,
    trajectory: CapabilityTrajectory,
    threshold: float,
    domain: tuple[float, float],
    grid: float,
) -> list[RateFunction]:
    """Deterministic rate schedule for placement that ignores estimates."""
    schedule = BudgetSchedule(kind="constant", amount=budget, delay=delay)
    rate = _zero_rate(*domain)
    rates = [rate]
    for t in range(trajectory.horizon):
        plan = allocate(
            policy,
            schedule.budget_at(t),
            None,
            threshold,
            y0=domain[0],
            y_max=domain[1],
            grid=grid,
        )
        rate = plan.apply(rate, production)
        rates.append(rate)
    return rates


def required_budget(
    target_miss: float,
    *,
    delay: int,
    policy: AllocationPolicy,
    production: ProductionFunction,
    trajectory: CapabilityTrajectory,
    threshold: float,
    domain: tuple[float, float],
    grid: float = 0.1,
    tol: float = 1e-6,
) -> float:
    """Smallest constant per-step budget that pushes the miss chance to target.

    Bisection over the budget scale against the exact never-detected
    probability of the coupled build. Only estimate-independent placement
    qualifies; raise otherwise rather than silently using a stochastic
    objective.
    """
    if policy.kind != "threshold-focused":
        raise ValueError("budget search needs an estimate-independent policy")
    if not 0 < target_miss < 1:
        raise ValueError("target miss probability must lie in (0, 1)")

    def miss(budget: float) -> float:
        rates = _threshold_build(
            budget, delay, policy, production, trajectory, threshold, domain, grid
        )
        return dynamic_miss_probability(rates, trajectory, threshold)

    if miss(0.0) <= target_miss:
        return 0.0
    hi = 1.0
    for _ in range(60):
        if miss(hi) <= target_miss:
            break
        hi *= 2.0
    else:
        raise ValueError("target miss probability unreachable on this horizon")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if miss(mid) <= target_miss:
            hi = mid
        else:
            lo = mid
    return hi
