import math
from statistics import NormalDist

import numpy as np
import pytest

from capwatch.allocation import (
    AllocationPolicy,
    BudgetSchedule,
    NormalForecast,
    ProductionFunction,
    allocate,
    dynamic_miss_probability,
    evolve_rate_schedule,
    required_budget,
)
from capwatch.dynamics import CapabilityTrajectory, run_chain
from capwatch.sensitivity import RateFunction

TEN_STEPS = CapabilityTrajectory.linear(start=0.0, increment=1.0, horizon=10)
THRESHOLD_POLICY = AllocationPolicy(kind="threshold-focused", lookahead=1.0)
UNIT_PRODUCTION = ProductionFunction()


def threshold_build(budget, delay, horizon, threshold, domain):
    """Deterministic rate schedule for placement that ignores estimates."""
    schedule = BudgetSchedule(kind="constant", amount=budget, delay=delay)
    rate = RateFunction.constant(0.0, domain[1])
    rates = [rate]
    for t in range(horizon):
        plan = allocate(
            THRESHOLD_POLICY,
            schedule.budget_at(t),
            None,
            threshold,
            y0=domain[0],
            y_max=domain[1],
        )
        rates.append(plan.apply(rate, UNIT_PRODUCTION))
        rate = rates[-1]
    return rates


# -- budgets and production --------------------------------------------------


def test_production_examples():
    assert UNIT_PRODUCTION.produce(2.0, 5.0, 6.0) == 2.0
    assert UNIT_PRODUCTION.produce(2.0, 5.0, 7.0) == 1.0
    assert UNIT_PRODUCTION.produce(0.0, 5.0, 6.0) == 0.0
    assert ProductionFunction(efficiency=0.5).produce(2.0, 5.0, 6.0) == 1.0
    with pytest.raises(ValueError, match="empty production band"):
        UNIT_PRODUCTION.produce(1.0, 6.0, 6.0)
    with pytest.raises(ValueError, match="negative budget"):
        UNIT_PRODUCTION.produce(-1.0, 5.0, 6.0)
    with pytest.raises(ValueError, match="efficiency"):
        ProductionFunction(efficiency=0.0)


def test_budget_schedule_kinds():
    flat = BudgetSchedule(kind="constant", amount=1.5)
    assert flat.budget_at(0) == 1.5
    assert flat.budget_at(40) == 1.5

    late = BudgetSchedule(kind="constant", amount=1.5, delay=2)
    assert late.budget_at(0) == 0.0
    assert late.budget_at(1) == 0.0
    assert late.budget_at(2) == 1.5

    decaying = BudgetSchedule(kind="exponential-decay", amount=4.0, decay=0.5, delay=1)
    assert decaying.budget_at(0) == 0.0
    assert decaying.budget_at(1) == 4.0
    assert decaying.budget_at(3) == pytest.approx(4.0 * math.exp(-1.0))

    custom = BudgetSchedule(kind="custom", amounts=(3.0, 2.0, 1.0), delay=1)
    assert [custom.budget_at(t) for t in range(6)] == [0.0, 3.0, 2.0, 1.0, 0.0, 0.0]


def test_budget_schedule_validation_and_round_trip():
    with pytest.raises(ValueError, match="unknown budget kind"):
        BudgetSchedule(kind="sawtooth")
    with pytest.raises(ValueError, match="non-negative"):
        BudgetSchedule(amount=-1.0)
    with pytest.raises(ValueError, match="non-negative"):
        BudgetSchedule(kind="custom", amounts=(1.0, -0.5))
    for schedule in (
        BudgetSchedule(kind="constant", amount=2.0, delay=3),
        BudgetSchedule(kind="exponential-decay", amount=4.0, decay=0.25),
        BudgetSchedule(kind="custom", amounts=(1.0, 0.0, 2.5)),
    ):
        assert BudgetSchedule.from_dict(schedule.to_dict()) == schedule


def test_forecast_matches_the_reference_normal():
    fc = NormalForecast(mean=1.0, std=0.5, quantile=0.9)
    assert fc.upper_increment() == NormalDist(1.0, 0.5).inv_cdf(0.9)
    with pytest.raises(ValueError):
        NormalForecast(std=0.0)
    with pytest.raises(ValueError):
        NormalForecast(quantile=1.0)


def test_policy_validation_and_reach():
    with pytest.raises(ValueError, match="unknown policy kind"):
        AllocationPolicy(kind="chaotic")
    with pytest.raises(ValueError, match="lookahead"):
        AllocationPolicy(kind="balanced", lookahead=0.0)
    with pytest.raises(ValueError, match="threshold_weight"):
        AllocationPolicy(kind="balanced", threshold_weight=1.5)

    assert AllocationPolicy(kind="frontier-tracking", lookahead=2.5).frontier_reach() == 2.5
    fc = NormalForecast(mean=1.0, std=0.5, quantile=0.9)
    tracker = AllocationPolicy(kind="frontier-tracking", forecast=fc)
    assert tracker.frontier_reach() == fc.upper_increment()
    pessimist = AllocationPolicy(
        kind="frontier-tracking", forecast=NormalForecast(mean=-5.0, std=1.0, quantile=0.9)
    )
    assert pessimist.frontier_reach() == 0.0


def test_policy_dict_round_trip():
    cases = [
        AllocationPolicy(kind="threshold-focused", lookahead=2.0),
        AllocationPolicy(kind="balanced", lookahead=3.0, threshold_weight=0.25),
        AllocationPolicy(
            kind="frontier-tracking",
            forecast=NormalForecast(mean=1.2, std=0.4, quantile=0.95),
        ),
    ]
    for policy in cases:
        assert AllocationPolicy.from_dict(policy.to_dict()) == policy


# -- single-step allocation --------------------------------------------------


def test_allocation_conserves_the_budget():
    policy = AllocationPolicy(kind="balanced", lookahead=1.0, threshold_weight=0.5)
    plan = allocate(policy, 1.7, [3.0], 5.0, y0=0.0, y_max=10.0)
    assert plan.total() == 1.7
    assert len(plan.entries) == 2

    skew = AllocationPolicy(kind="balanced", lookahead=1.0, threshold_weight=0.3)
    plan = allocate(skew, 2.3, [3.0], 5.0, y0=0.0, y_max=10.0)
    assert plan.total() == pytest.approx(2.3, rel=1e-12)


def test_bands_snap_outward_to_the_grid():
    policy = AllocationPolicy(kind="frontier-tracking", lookahead=1.0)
    plan = allocate(policy, 1.0, [3.14], 5.0, y0=0.0, y_max=10.0)
    (lo, hi, amount) = plan.entries[0]
    assert lo == pytest.approx(3.1, abs=1e-9)
    assert hi == pytest.approx(4.2, abs=1e-9)
    assert amount == 1.0


def test_band_near_the_top_stays_inside_the_range():
    policy = AllocationPolicy(kind="frontier-tracking", lookahead=2.0)
    plan = allocate(policy, 1.0, [9.97], 5.0, y0=0.0, y_max=10.0)
    (lo, hi, _) = plan.entries[0]
    assert lo < hi <= 10.0


def test_frontier_band_starts_at_the_origin_without_history():
    policy = AllocationPolicy(kind="frontier-tracking", lookahead=1.0)
    for history in (None, []):
        plan = allocate(policy, 1.0, history, 5.0, y0=0.0, y_max=10.0)
        assert plan.entries[0][0] == 0.0


def test_zero_weight_leaves_the_threshold_band_unfunded():
    policy = AllocationPolicy(kind="balanced", lookahead=1.0, threshold_weight=0.0)
    plan = allocate(policy, 1.0, [2.0], 5.0, y0=0.0, y_max=10.0)
    assert plan.lowest_funded_level() == pytest.approx(2.0, abs=1e-9)


def test_negative_budget_is_rejected():
    with pytest.raises(ValueError, match="negative budget"):
        allocate(THRESHOLD_POLICY, -0.5, None, 5.0, y0=0.0, y_max=10.0)


def test_threshold_policy_never_funds_below_the_threshold():
    plan = allocate(THRESHOLD_POLICY, 1.0, [1.0, 2.0], 5.0, y0=0.0, y_max=10.0)
    assert plan.lowest_funded_level() >= 5.0 - 1e-9

    evo = evolve_rate_schedule(
        BudgetSchedule(kind="constant", amount=1.0),
        THRESHOLD_POLICY,
        UNIT_PRODUCTION,
        TEN_STEPS,
        5.0,
        domain=(0.0, 10.0),
        seed=4,
    )
    for rate in evo.rates:
        assert rate.cumulative(5.0) <= 1e-12


# -- coupled evolutions ------------------------------------------------------


def test_zero_budget_pins_the_estimate_to_the_origin():
    evo = evolve_rate_schedule(
        BudgetSchedule(kind="constant", amount=0.0),
        THRESHOLD_POLICY,
        UNIT_PRODUCTION,
        TEN_STEPS,
        5.0,
        domain=(0.0, 10.0),
        seed=0,
    )
    assert np.all(evo.estimates == 0.0)
    assert np.all(evo.frontier_sensitivity == 0.0)
    assert np.all(evo.detection_likelihood == 0.0)
    assert evo.detected_step is None
    np.testing.assert_allclose(evo.bias_magnitude, evo.levels)


def test_evolution_series_shapes():
    evo = evolve_rate_schedule(
        BudgetSchedule(kind="constant", amount=1.0),
        AllocationPolicy(kind="frontier-tracking", lookahead=2.0),
        UNIT_PRODUCTION,
        TEN_STEPS,
        5.0,
        domain=(0.0, 10.0),
        seed=11,
    )
    assert evo.levels.shape == (11,)
    assert evo.estimates.shape == (11,)
    assert evo.frontier_sensitivity.shape == (11,)
    assert evo.detection_likelihood.shape == (11,)
    assert evo.budgets.shape == (10,)
    assert len(evo.rates) == 11
    assert np.all(evo.bias_magnitude >= -1e-9)


def test_evolution_requires_a_domain_or_a_rate():
    with pytest.raises(ValueError, match="initial rate"):
        evolve_rate_schedule(
            BudgetSchedule(), THRESHOLD_POLICY, UNIT_PRODUCTION, TEN_STEPS, 5.0
        )
    off = CapabilityTrajectory.linear(start=0.0, increment=2.0, horizon=10)
    with pytest.raises(ValueError, match="leaves the tested range"):
        evolve_rate_schedule(
            BudgetSchedule(),
            THRESHOLD_POLICY,
            UNIT_PRODUCTION,
            off,
            5.0,
            domain=(0.0, 10.0),
        )


def test_more_budget_builds_pointwise_denser_suites():
    lean = threshold_build(0.2, 0, 10, 5.0, (0.0, 10.0))
    rich = threshold_build(0.4, 0, 10, 5.0, (0.0, 10.0))
    query = np.linspace(0.05, 9.95, 199)
    for a, b in zip(lean, rich):
        assert np.all(b.rate_at(query) >= a.rate_at(query) - 1e-12)
    miss = [
        dynamic_miss_probability(rates, TEN_STEPS, 5.0) for rates in (lean, rich)
    ]
    assert miss[1] < miss[0]


def test_dynamic_miss_probability_closed_form():
    rates = threshold_build(0.1, 0, 10, 5.0, (0.0, 10.0))
    # per-step mass above the threshold is 0.1 * (t + 1) on the sixth
    # through tenth steps, so the survival exponent is 4.0
    expected = math.exp(-(0.6 + 0.7 + 0.8 + 0.9 + 1.0))
    assert dynamic_miss_probability(rates, TEN_STEPS, 5.0) == pytest.approx(
        expected, rel=1e-12
    )
    with pytest.raises(ValueError, match="shorter than the horizon"):
        dynamic_miss_probability(rates[:5], TEN_STEPS, 5.0)


def test_dynamic_miss_probability_matches_the_chain():
    rates = threshold_build(0.1, 0, 10, 5.0, (0.0, 10.0))
    predicted = dynamic_miss_probability(rates, TEN_STEPS, 5.0)
    ens = run_chain(TEN_STEPS, rates, 5.0, n_paths=20_000, seed=21)
    se = math.sqrt(predicted * (1 - predicted) / 20_000)
    assert abs(ens.miss_rate - predicted) < 4.0 * se


def test_required_budget_achieves_the_target():
    budget = required_budget(
        0.1,
        delay=0,
        policy=THRESHOLD_POLICY,
        production=UNIT_PRODUCTION,
        trajectory=TEN_STEPS,
        threshold=5.0,
        domain=(0.0, 10.0),
    )
    assert budget > 0.0
    rates = threshold_build(budget, 0, 10, 5.0, (0.0, 10.0))
    miss = dynamic_miss_probability(rates, TEN_STEPS, 5.0)
    assert miss <= 0.1
    assert miss == pytest.approx(0.1, abs=1e-4)


def test_required_budget_grows_with_the_delay():
    budgets = [
        required_budget(
            0.1,
            delay=d,
            policy=THRESHOLD_POLICY,
            production=UNIT_PRODUCTION,
            trajectory=TEN_STEPS,
            threshold=5.0,
            domain=(0.0, 10.0),
        )
        for d in (0, 3, 6)
    ]
    assert budgets[0] < budgets[1] < budgets[2]


def test_required_budget_rejects_bad_inputs():
    with pytest.raises(ValueError, match="estimate-independent"):
        required_budget(
            0.1,
            delay=0,
            policy=AllocationPolicy(kind="frontier-tracking"),
            production=UNIT_PRODUCTION,
            trajectory=TEN_STEPS,
            threshold=5.0,
            domain=(0.0, 10.0),
        )
    with pytest.raises(ValueError, match="target miss"):
        required_budget(
            1.0,
            delay=0,
            policy=THRESHOLD_POLICY,
            production=UNIT_PRODUCTION,
            trajectory=TEN_STEPS,
            threshold=5.0,
            domain=(0.0, 10.0),
        )
    flat = CapabilityTrajectory.linear(start=0.0, increment=0.4, horizon=10)
    with pytest.raises(ValueError, match="unreachable"):
        required_budget(
            0.1,
            delay=0,
            policy=THRESHOLD_POLICY,
            production=UNIT_PRODUCTION,
            trajectory=flat,
            threshold=5.0,
            domain=(0.0, 10.0),
        )
