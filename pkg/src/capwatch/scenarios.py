"""Named experiment configurations and the series/metrics assembly.

A scenario is either static (a fixed test suite, summarized analytically
and optionally cross-checked by a path ensemble) or allocation-driven (a
budget schedule coupled to the estimate chain). Both produce a
:class:`ScenarioResult` whose table and metrics are byte-reproducible from
the config hash and seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .allocation import (
    AllocationPolicy,
    BudgetSchedule,
    ProductionFunction,
    evolve_rate_schedule,
)
from .dynamics import CapabilityTrajectory, run_chain
from .estimator import EstimatorDistribution, lag_law, miss_probability
from .sensitivity import RateFunction
from .version import __version__

__all__ = [
    "AllocationSpec",
    "BUILTIN_NAMES",
    "Scenario",
    "ScenarioResult",
    "builtin",
    "load_config",
    "run",
    "validate_config",
]


@dataclass(frozen=True)
class AllocationSpec:
    """Budget, placement, and production knobs for a coupled build run."""

    schedule: BudgetSchedule
    policy: AllocationPolicy
    production: ProductionFunction = ProductionFunction()
    grid: float = 0.1

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationSpec":
        return cls(
            schedule=BudgetSchedule.from_dict(data.get("schedule", {})),
            policy=AllocationPolicy.from_dict(data.get("policy", {})),
            production=ProductionFunction(**data.get("production", {})),
            grid=data.get("grid", 0.1),
        )

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "policy": self.policy.to_dict(),
            "production": {"efficiency": self.production.efficiency},
            "grid": self.grid,
        }


@dataclass(frozen=True)
class Scenario:
    name: str
    threshold: float
    rate: RateFunction | None = None
    allocation: AllocationSpec | None = None
    domain: tuple[float, float] | None = None
    trajectory: CapabilityTrajectory | None = None
    growth: float = 1.0
    paths: int = 0
    seed: int | None = None
    y_grid_step: float = 0.05

    def violations(self) -> list[str]:
        out = []
        if not self.name:
            out.append("missing scenario name")
        if self.rate is None and self.allocation is None:
            out.append("scenario defines neither a rate function nor an allocation")
        if self.rate is not None and self.allocation is not None:
            out.append("scenario defines both a rate function and an allocation")
        if self.rate is not None:
            out.extend(self.rate.violations())
        if self.allocation is not None and self.domain is None:
            out.append("allocation scenario needs a danger range")
        if self.allocation is not None and self.trajectory is None:
            out.append("allocation scenario needs a trajectory")
        if self.domain is not None and not self.domain[1] > self.domain[0]:
            out.append("danger range is empty")
        if not math.isfinite(self.threshold):
            out.append("non-finite threshold")
        if self.growth <= 0:
            out.append("growth must be positive")
        if self.paths < 0:
            out.append("negative path count")
        if self.paths and self.trajectory is None:
            out.append("ensemble requested without a trajectory")
        if self.y_grid_step <= 0:
            out.append("series grid step must be positive")
        lo, hi = self._range()
        if out:
            return out
        if not lo <= self.threshold <= hi:
            out.append("threshold outside the danger range")
        if self.trajectory is not None:
            levels = self.trajectory.levels()
            if levels[0] < lo or levels[-1] > hi:
                out.append("trajectory leaves the danger range")
        return out

    def require_valid(self) -> None:
        problems = self.violations()
        if problems:
            raise ValueError(f"scenario {self.name or '<unnamed>'}: " + "; ".join(problems))

    def _range(self) -> tuple[float, float]:
        if self.rate is not None:
            return self.rate.y0, self.rate.y_max
        if self.domain is not None:
            return self.domain
        return 0.0, 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if "builtin" in data:
            base = builtin(data["builtin"])
            overrides = {k: v for k, v in data.items() if k != "builtin"}
            return base.replace(**overrides)
        return cls(
            name=data.get("name", ""),
            threshold=data.get("threshold", 5.0),
            rate=RateFunction.from_dict(data["rate"]) if "rate" in data else None,
            allocation=(
                AllocationSpec.from_dict(data["allocation"])
                if "allocation" in data
                else None
            ),
            domain=tuple(data["domain"]) if "domain" in data else None,
            trajectory=(
                CapabilityTrajectory.from_dict(data["trajectory"])
                if "trajectory" in data
                else None
            ),
            growth=data.get("growth", 1.0),
            paths=data.get("paths", 0),
            seed=data.get("seed"),
            y_grid_step=data.get("y_grid_step", 0.05),
        )

    def replace(self, **overrides) -> "Scenario":
        data = self.to_dict()
        data.update(overrides)
        return Scenario.from_dict(data)

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "threshold": self.threshold}
        if self.rate is not None:
            out["rate"] = self.rate.to_dict()
        if self.allocation is not None:
            out["allocation"] = self.allocation.to_dict()
        if self.domain is not None:
            out["domain"] = list(self.domain)
        if self.trajectory is not None:
            out["trajectory"] = self.trajectory.to_dict()
        out["growth"] = self.growth
        out["paths"] = self.paths
        if self.seed is not None:
            out["seed"] = self.seed
        out["y_grid_step"] = self.y_grid_step
        return out

    def config_hash(self) -> str:
        data = self.to_dict()
        data.pop("seed", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class ScenarioResult:
    """Assembled series table plus scalar metrics and provenance."""

    name: str
    columns: tuple[str, ...]
    table: np.ndarray
    metrics: dict
    config_hash: str
    seed: int
    tool_version: str = __version__

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[1] != len(self.columns):
            raise ValueError("table shape does not match the column contract")

    def column(self, name: str) -> np.ndarray:
        return self.table[:, self.columns.index(name)]

    def summary_line(self) -> str:
        def show(key):
            value = self.metrics.get(key)
            return "n/a" if value is None else f"{value:.6g}"

        return (
            f"{self.name}: miss_probability={show('miss_probability')} "
            f"conditional_lag={show('conditional_lag')} "
            f"final_bias_magnitude={show('final_bias_magnitude')}"
        )


def _series_grid(y0: float, y_max: float, step: float) -> np.ndarray:
    n = max(int(round((y_max - y0) / step)), 1)
    return np.linspace(y0, y_max, n + 1)


def _run_static(scenario: Scenario, seed: int) -> ScenarioResult:
    rate = scenario.rate
    assert rate is not None
    law = (
        lag_law(rate, scenario.threshold, growth=scenario.growth)
        if scenario.threshold < rate.y_max
        else None
    )
    metrics = {
        "threshold": scenario.threshold,
        "miss_probability": miss_probability(rate, scenario.threshold),
        "conditional_lag": (
            None if law is None or law.always_missed else law.conditional_mean_time()
        ),
        "paths": scenario.paths,
    }

    if scenario.paths:
        assert scenario.trajectory is not None
        ensemble = run_chain(
            scenario.trajectory,
            rate,
            scenario.threshold,
            n_paths=scenario.paths,
            seed=seed,
        )
        y_grid = ensemble.levels
    else:
        y_grid = _series_grid(rate.y0, rate.y_max, scenario.y_grid_step)

    bias = np.empty_like(y_grid)
    detection = np.empty_like(y_grid)
    for i, y_t in enumerate(y_grid):
        dist = EstimatorDistribution(rate, float(y_t))
        bias[i] = dist.bias_magnitude()
        detection[i] = dist.detection_likelihood(scenario.threshold)
    columns = ["y_t", "bias_magnitude", "detection_likelihood"]
    series = [y_grid, bias, detection]

    if scenario.paths:
        columns += [
            "ensemble_mean_estimate",
            "ensemble_bias_magnitude",
            "ensemble_detection_rate",
        ]
        series += [
            ensemble.mean_estimate,
            ensemble.bias_magnitude,
            ensemble.detection_likelihood,
        ]
        metrics["empirical_miss_rate"] = ensemble.miss_rate
        metrics["empirical_conditional_lag"] = ensemble.conditional_lag
    metrics["final_bias_magnitude"] = float(bias[-1])
    metrics["final_detection_likelihood"] = float(detection[-1])

    return ScenarioResult(
        name=scenario.name,
        columns=tuple(columns),
        table=np.column_stack(series),
        metrics=metrics,
        config_hash=scenario.config_hash(),
        seed=seed,
    )


def _run_allocation(scenario: Scenario, seed: int) -> ScenarioResult:
    spec = scenario.allocation
    assert spec is not None and scenario.trajectory is not None and scenario.domain
    n_paths = max(scenario.paths, 1)
    evolutions = []
    for i in range(n_paths):
        child = np.random.SeedSequence(seed, spawn_key=(i,))
        evolutions.append(
            evolve_rate_schedule(
                spec.schedule,
                spec.policy,
                spec.production,
                scenario.trajectory,
                scenario.threshold,
                domain=scenario.domain,
                grid=spec.grid,
                seed=child,
            )
        )

    levels = evolutions[0].levels
    bias = np.mean([e.bias_magnitude for e in evolutions], axis=0)
    detection = np.mean([e.detection_likelihood for e in evolutions], axis=0)
    sensitivity = np.mean([e.frontier_sensitivity for e in evolutions], axis=0)
    budgets = np.concatenate([evolutions[0].budgets, [0.0]])
    steps = np.arange(len(levels), dtype=float)

    t_cross = scenario.trajectory.time_to_reach(scenario.threshold)
    lags = [
        e.detected_step - t_cross
        for e in evolutions
        if e.detected_step is not None and math.isfinite(t_cross)
    ]
    missed = sum(1 for e in evolutions if e.detected_step is None)
    metrics = {
        "threshold": scenario.threshold,
        "miss_probability": missed / n_paths,
        "conditional_lag": float(np.mean(lags)) if lags else None,
        "final_bias_magnitude": float(bias[-1]),
        "final_detection_likelihood": float(detection[-1]),
        "final_frontier_sensitivity": float(sensitivity[-1]),
        "paths": n_paths,
    }

    return ScenarioResult(
        name=scenario.name,
        columns=(
            "y_t",
            "bias_magnitude",
            "detection_likelihood",
            "t",
            "budget",
            "frontier_sensitivity",
        ),
        table=np.column_stack([levels, bias, detection, steps, budgets, sensitivity]),
        metrics=metrics,
        config_hash=scenario.config_hash(),
        seed=seed,
    )


def run(scenario: Scenario, *, seed: int | None = None) -> ScenarioResult:
    """Evaluate a scenario deterministically under the given seed.

    A seed pinned on the scenario wins over the argument; with neither the
    run uses seed 0.
    """
    scenario.require_valid()
    if scenario.seed is not None:
        seed = scenario.seed
    if seed is None:
        seed = 0
    if scenario.allocation is not None:
        return _run_allocation(scenario, int(seed))
    return _run_static(scenario, int(seed))


_TEN_LINEAR = CapabilityTrajectory.linear(horizon=10, start=0.0, increment=1.0)
_THIRTY_LINEAR = CapabilityTrajectory.linear(horizon=30, start=0.0, increment=1.0)


def _static(name, endpoints, rates, threshold=5.0) -> Scenario:
    return Scenario(
        name=name,
        threshold=threshold,
        rate=RateFunction(endpoints=endpoints, rates=rates, y_max=10.0),
        trajectory=_TEN_LINEAR,
    )


def _policy(name, schedule, policy, *, horizon, domain, paths=200) -> Scenario:
    return Scenario(
        name=name,
        threshold=5.0,
        allocation=AllocationSpec(schedule=schedule, policy=policy),
        domain=domain,
        trajectory=CapabilityTrajectory.linear(
            horizon=horizon, start=0.0, increment=1.0
        ),
        paths=paths,
    )


@lru_cache(maxsize=None)
def _builtins() -> dict[str, Scenario]:
    entries = [
        _static("single-block-s1", (10.0,), (2.0,)),
        _static("single-block-s2", (10.0,), (0.5,)),
        _static("two-block-s1", (6.0, 10.0), (2.0, 0.1)),
        _static("two-block-s2", (6.0, 10.0), (0.5, 0.1)),
        _static("reversed-s1", (6.0, 10.0), (0.1, 2.0)),
        _static("reversed-s2", (6.0, 10.0), (0.1, 0.5)),
        _static("mid-gap", (4.0, 6.0, 10.0), (2.0, 0.0, 2.0)),
        _static("high-threshold", (6.0, 10.0), (2.0, 0.1), threshold=8.0),
        _static("low-threshold", (6.0, 10.0), (2.0, 0.1), threshold=3.0),
        _policy(
            "market-dynamics",
            BudgetSchedule(kind="exponential-decay", amount=4.0, decay=1.0),
            AllocationPolicy(kind="frontier-tracking", lookahead=2.0),
            horizon=10,
            domain=(0.0, 10.0),
        ),
        _policy(
            "policy-frontier",
            BudgetSchedule(kind="constant", amount=1.0),
            AllocationPolicy(kind="frontier-tracking", lookahead=1.0),
            horizon=30,
            domain=(0.0, 32.0),
        ),
        _policy(
            "policy-threshold",
            BudgetSchedule(kind="constant", amount=1.0),
            AllocationPolicy(kind="threshold-focused", lookahead=2.0),
            horizon=30,
            domain=(0.0, 32.0),
        ),
        _policy(
            "policy-balanced",
            BudgetSchedule(kind="constant", amount=2.0),
            AllocationPolicy(kind="balanced", lookahead=3.0, threshold_weight=0.5),
            horizon=30,
            domain=(0.0, 32.0),
        ),
    ]
    return {s.name: s for s in entries}


BUILTIN_NAMES = tuple(sorted(_builtins().keys()))


def builtin(name: str) -> Scenario:
    try:
        return _builtins()[name]
    except KeyError:
        known = ", ".join(sorted(_builtins()))
        raise ValueError(f"unknown builtin scenario {name!r} (known: {known})") from None


def validate_config(data) -> list[str]:
    """Structural and semantic checks; returns violation strings, empty if ok."""
    if isinstance(data, dict) and "scenarios" in data:
        version = data.get("schema_version", 1)
        if version != 1:
            return [f"unsupported schema_version {version!r}"]
        raw_list = data["scenarios"]
        if not isinstance(raw_list, list) or not raw_list:
            return ["scenarios must be a non-empty list"]
    elif isinstance(data, dict):
        raw_list = [data]
    else:
        return ["config must be a JSON object"]

    out: list[str] = []
    names: set[str] = set()
    for index, raw in enumerate(raw_list):
        if not isinstance(raw, dict):
            out.append(f"scenario #{index}: not an object")
            continue
        if "builtin" in raw and raw["builtin"] not in _builtins():
            out.append(f"scenario #{index}: unknown builtin {raw['builtin']!r}")
            continue
        try:
            scenario = Scenario.from_dict(raw)
        except (TypeError, ValueError, KeyError) as exc:
            out.append(f"scenario #{index}: malformed ({exc})")
            continue
        label = scenario.name or f"#{index}"
        out.extend(f"scenario {label}: {v}" for v in scenario.violations())
        if scenario.name in names:
            out.append(f"scenario {label}: duplicate name")
        names.add(scenario.name)
    return out


def load_config(data) -> list[Scenario]:
    """Parse a validated config (dict) into scenarios."""
    problems = validate_config(data)
    if problems:
        raise ValueError("; ".join(problems))
    raw_list = data["scenarios"] if "scenarios" in data else [data]
    return [Scenario.from_dict(raw) for raw in raw_list]
