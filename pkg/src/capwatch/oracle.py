"""Direct simulation of a dense test grid, used to cross-check closed forms.

The closed-form laws in :mod:`capwatch.estimator` describe an idealized
continuum of tests. This module builds the discrete object those laws
approximate: a grid of width-``step`` cells, each holding an independent
pass/fail test whose pass probability comes from the local rate. Running
the grid and summarizing the draws gives reference numbers that share no
code with the analytic path.

Grids at different steps can be coupled by simulating only the finest one
and coarsening: a parent cell fires iff any child fired. For rates that
are constant across each parent cell this reproduces the coarse grid's law
exactly, so refinement studies see the discretization trend rather than
fresh Monte Carlo noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .sensitivity import RateFunction

__all__ = [
    "GridDraws",
    "GridTestModel",
    "OracleSummary",
    "coarsen",
    "oracle_summary",
    "proportion_se",
    "sample_grid",
    "z_score",
]

_BLOCK = 2048


@dataclass(frozen=True)
class GridTestModel:
    """A dense grid of independent pass/fail tests under a rate function.

    Cells tile ``[y0, min(truncation, y_max)]``; the last cell may be
    partial. Cell ``i`` passes with probability ``1 - exp(-rate * width)``
    using the rate at the cell midpoint, and a passing cell reports its
    right edge. The reported estimate is the highest passing cell's level,
    or ``y0`` when nothing passes.
    """

    rate: RateFunction
    truncation: float
    step: float = 1e-3

    def __post_init__(self):
        self.rate.require_valid()
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.truncation < self.rate.y0:
            raise ValueError("truncation below the origin")

    @cached_property
    def cap(self) -> float:
        return min(self.truncation, self.rate.y_max)

    @cached_property
    def edges(self) -> np.ndarray:
        y0 = self.rate.y0
        n = max(int(math.ceil((self.cap - y0) / self.step - 1e-9)), 0)
        edges = y0 + self.step * np.arange(n + 1)
        if n:
            edges[-1] = self.cap
        return edges

    @property
    def n_cells(self) -> int:
        return len(self.edges) - 1

    @cached_property
    def levels(self) -> np.ndarray:
        """Reported level per cell (its right edge)."""
        return self.edges[1:]

    @cached_property
    def pass_probs(self) -> np.ndarray:
        widths = np.diff(self.edges)
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        return -np.expm1(-self.rate.rate_at(mids) * widths)

    def first_cell_above(self, threshold: float) -> int:
        """Index of the first cell whose reported level clears the threshold."""
        return int(np.searchsorted(self.levels, threshold + 1e-9, side="left"))


@dataclass(frozen=True)
class GridDraws:
    """Raw per-draw cell indices from one grid simulation.

    ``sup_idx`` is the highest passing cell (-1 when nothing passed).
    ``lowest_idx`` is the lowest passing cell at or above the threshold
    cell the draw was made with (-1 when none), or ``None`` when no
    threshold was requested.
    """

    model: GridTestModel
    sup_idx: np.ndarray
    lowest_idx: np.ndarray | None = None

    def reported_levels(self) -> np.ndarray:
        levels = self.model.levels
        return np.where(self.sup_idx >= 0, levels[np.maximum(self.sup_idx, 0)], self.model.rate.y0)

    def gap_levels(self, threshold: float) -> np.ndarray:
        """Reported gap above the threshold for draws whose lowest cell exists."""
        if self.lowest_idx is None:
            raise ValueError("draws were taken without a threshold")
        hit = self.lowest_idx >= 0
        return self.model.levels[self.lowest_idx[hit]] - threshold


def sample_grid(
    model: GridTestModel, n_draws: int, seed, *, threshold: float | None = None
) -> GridDraws:
    """Simulate the grid, block by block with per-block child seeds.

    The uniform stream depends only on ``seed`` and the block layout, so
    repeated calls reproduce each other and calls with and without a
    threshold share the same draws.
    """
    if n_draws <= 0:
        raise ValueError("need a positive number of draws")
    n = model.n_cells
    probs = model.pass_probs
    j0 = None if threshold is None else model.first_cell_above(threshold)
    sup = np.empty(n_draws, dtype=np.int64)
    lowest = None if threshold is None else np.empty(n_draws, dtype=np.int64)
    for block, start in enumerate(range(0, n_draws, _BLOCK)):
        stop = min(start + _BLOCK, n_draws)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
        fired = rng.random((stop - start, n)) < probs
        any_fired = fired.any(axis=1)
        sup[start:stop] = np.where(
            any_fired, n - 1 - np.argmax(fired[:, ::-1], axis=1), -1
        )
        if lowest is not None:
            tail = fired[:, j0:]
            any_tail = tail.any(axis=1)
            lowest[start:stop] = np.where(any_tail, j0 + np.argmax(tail, axis=1), -1)
    return GridDraws(model=model, sup_idx=sup, lowest_idx=lowest)


def coarsen(draws: GridDraws, factor: int) -> GridDraws:
    """Map fine-grid draws onto the grid ``factor`` times coarser.

    A coarse cell passes iff any of its children passed, so the coarse
    indices are just the fine indices divided down. Requires the fine cell
    count to split evenly.
    """
    if factor < 1:
        raise ValueError("factor must be at least 1")
    fine = draws.model
    if fine.n_cells % factor:
        raise ValueError("fine grid does not split into whole coarse cells")
    coarse_model = GridTestModel(
        rate=fine.rate, truncation=fine.truncation, step=fine.step * factor
    )
    if coarse_model.n_cells != fine.n_cells // factor:
        raise ValueError("coarse grid does not align with the fine grid")

    def shrink(idx):
        if idx is None:
            return None
        return np.where(idx >= 0, idx // factor, -1)

    return GridDraws(
        model=coarse_model,
        sup_idx=shrink(draws.sup_idx),
        lowest_idx=shrink(draws.lowest_idx),
    )


@dataclass(frozen=True)
class OracleSummary:
    """Monte Carlo statistics from one batch of grid draws."""

    draws: int
    mean: float
    mean_se: float
    bias_magnitude: float
    point_mass_rate: float
    detection_rate: float | None
    miss_rate: float | None
    lag_mean: float | None
    lag_se: float | None
    cdf_at: dict[float, float]


def oracle_summary(
    draws: GridDraws, *, threshold: float | None = None, cdf_points=()
) -> OracleSummary:
    """Summarize grid draws into the quantities the closed forms predict."""
    reported = draws.reported_levels()
    n = len(reported)
    mean = float(reported.mean())
    mean_se = float(reported.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    point_mass_rate = float(np.mean(draws.sup_idx < 0))
    detection_rate = miss_rate = lag_mean = lag_se = None
    if threshold is not None:
        detection_rate = float(np.mean(reported > threshold + 1e-9))
        if draws.lowest_idx is not None:
            miss_rate = float(np.mean(draws.lowest_idx < 0))
            gaps = draws.gap_levels(threshold)
            if len(gaps):
                lag_mean = float(gaps.mean())
                lag_se = (
                    float(gaps.std(ddof=1) / math.sqrt(len(gaps)))
                    if len(gaps) > 1
                    else 0.0
                )
    cdf_at = {
        float(q): float(np.mean(reported <= q + 1e-9)) for q in cdf_points
    }
    return OracleSummary(
        draws=n,
        mean=mean,
        mean_se=mean_se,
        bias_magnitude=float(draws.model.truncation - mean),
        point_mass_rate=point_mass_rate,
        detection_rate=detection_rate,
        miss_rate=miss_rate,
        lag_mean=lag_mean,
        lag_se=lag_se,
        cdf_at=cdf_at,
    )


def z_score(sample_value: float, analytic_value: float, se: float) -> float:
    """Standardized gap between a simulated statistic and its closed form.

    A zero standard error means the statistic is deterministic under the
    model; any gap there is a real disagreement, reported as inf.
    """
    if se == 0.0:
        return 0.0 if sample_value == analytic_value else math.inf
    return (sample_value - analytic_value) / se


def proportion_se(p: float, n: int) -> float:
    """Binomial standard error using the analytic proportion."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("proportion out of range")
    return math.sqrt(p * (1.0 - p) / n)
