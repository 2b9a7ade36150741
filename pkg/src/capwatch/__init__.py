"""capwatch: models of dangerous-capability testing and what it can miss.

The library builds piecewise-constant test sensitivity profiles, derives
the exact law of the highest-passing-test estimate under them, couples
that estimate to capability growth and evaluation budgets, and checks
every closed form against a brute-force grid oracle.
"""

from .allocation import (
    AllocationPlan,
    AllocationPolicy,
    BudgetSchedule,
    Evolution,
    NormalForecast,
    ProductionFunction,
    allocate,
    dynamic_miss_probability,
    evolve_rate_schedule,
    required_budget,
)
from .dynamics import (
    CapabilityTrajectory,
    ChainEnsemble,
    EstimateChainState,
    advance,
    run_chain,
)
from .estimator import (
    Bias,
    EstimatorDistribution,
    LagLaw,
    ThresholdMetrics,
    lag_law,
    miss_probability,
    threshold_metrics,
)
from .oracle import (
    GridDraws,
    GridTestModel,
    OracleSummary,
    coarsen,
    oracle_summary,
    proportion_se,
    sample_grid,
    z_score,
)
from .scenarios import (
    BUILTIN_NAMES,
    AllocationSpec,
    Scenario,
    ScenarioResult,
    builtin,
    load_config,
    run,
    validate_config,
)
from .sensitivity import RateFunction
from .version import __version__

__all__ = [
    "AllocationPlan",
    "AllocationPolicy",
    "AllocationSpec",
    "BUILTIN_NAMES",
    "Bias",
    "BudgetSchedule",
    "CapabilityTrajectory",
    "ChainEnsemble",
    "EstimateChainState",
    "EstimatorDistribution",
    "Evolution",
    "GridDraws",
    "GridTestModel",
    "LagLaw",
    "NormalForecast",
    "OracleSummary",
    "ProductionFunction",
    "RateFunction",
    "Scenario",
    "ScenarioResult",
    "ThresholdMetrics",
    "__version__",
    "advance",
    "allocate",
    "builtin",
    "coarsen",
    "dynamic_miss_probability",
    "evolve_rate_schedule",
    "lag_law",
    "load_config",
    "miss_probability",
    "oracle_summary",
    "proportion_se",
    "required_budget",
    "run",
    "run_chain",
    "sample_grid",
    "threshold_metrics",
    "validate_config",
    "z_score",
]
