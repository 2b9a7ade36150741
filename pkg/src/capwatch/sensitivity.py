"""Piecewise-constant test sensitivity over the danger axis.

A test suite is summarized by the rate at which tests fire per unit of
danger level. The rate is a step function on ``[y0, y_max]``: high where a
capability is probed densely with sensitive tests, low or zero where it is
not probed at all. Everything downstream (the estimator law, the update
chain, the investment simulations) consumes this one representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["RateFunction"]


def _as_float_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class RateFunction:
    """Step function mapping danger level to a detection rate.

    ``endpoints`` are the right edges of the steps, strictly increasing
    above the origin ``y0``. ``rates[i]`` applies on
    ``(endpoints[i-1], endpoints[i]]``; the first step is closed at ``y0``,
    so a query exactly on a boundary takes the lower step's rate. If the
    last endpoint stops short of ``y_max`` the remaining range carries
    rate zero (a reachable but untested tail). Instances are immutable.
    """

    endpoints: tuple[float, ...]
    rates: tuple[float, ...]
    y_max: float | None = None
    y0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "endpoints", _as_float_tuple(self.endpoints))
        object.__setattr__(self, "rates", _as_float_tuple(self.rates))
        object.__setattr__(self, "y0", float(self.y0))
        if self.y_max is None:
            top = self.endpoints[-1] if self.endpoints else None
            object.__setattr__(self, "y_max", top)
        else:
            object.__setattr__(self, "y_max", float(self.y_max))

    @classmethod
    def constant(cls, rate: float, y_max: float, y0: float = 0.0) -> "RateFunction":
        return cls(endpoints=(y_max,), rates=(rate,), y_max=y_max, y0=y0)

    @classmethod
    def from_dict(cls, data: dict) -> "RateFunction":
        return cls(
            endpoints=tuple(data.get("endpoints", ())),
            rates=tuple(data.get("rates", ())),
            y_max=data.get("y_max"),
            y0=data.get("y0", 0.0),
        )

    def to_dict(self) -> dict:
        return {
            "y0": self.y0,
            "endpoints": list(self.endpoints),
            "rates": list(self.rates),
            "y_max": self.y_max,
        }

    # -- validation ------------------------------------------------------

    def violations(self) -> list[str]:
        """Every invariant violation, as human-readable strings.

        An empty list means the function is usable. Numeric operations on
        an invalid instance raise instead of returning garbage.
        """
        problems: list[str] = []
        if not self.endpoints:
            problems.append("no segments defined")
            return problems
        if len(self.rates) != len(self.endpoints):
            problems.append(
                f"{len(self.rates)} rates for {len(self.endpoints)} endpoints"
            )
        if not math.isfinite(self.y0):
            problems.append("non-finite y0")
        if self.y_max is None or not math.isfinite(self.y_max):
            problems.append("non-finite y_max")
        if any(not math.isfinite(k) for k in self.rates):
            problems.append("non-finite rate")
        if any(k < 0 for k in self.rates if math.isfinite(k)):
            problems.append("negative rate")
        prev = self.y0
        for e in self.endpoints:
            if not math.isfinite(e):
                problems.append("non-finite endpoint")
                break
            if e <= prev:
                problems.append("non-increasing endpoints")
                break
            prev = e
        if (
            self.y_max is not None
            and math.isfinite(self.y_max)
            and self.endpoints
            and math.isfinite(self.endpoints[-1])
            and self.endpoints[-1] > self.y_max
        ):
            problems.append("endpoint beyond y_max")
        return problems

    @cached_property
    def _checked(self) -> bool:
        problems = self.violations()
        if problems:
            raise ValueError("invalid rate function: " + "; ".join(problems))
        return True

    def require_valid(self) -> None:
        self._checked

    # -- effective step representation ------------------------------------
    # The arrays below append an explicit zero-rate tail when the last
    # endpoint sits below y_max, so every level in [y0, y_max] maps to
    # exactly one piece.

    @cached_property
    def _edges(self) -> np.ndarray:
        edges = [self.y0, *self.endpoints]
        if self.endpoints[-1] < self.y_max:
            edges.append(self.y_max)
        return np.asarray(edges, dtype=float)

    @cached_property
    def _step_rates(self) -> np.ndarray:
        rates = list(self.rates)
        if self.endpoints[-1] < self.y_max:
            rates.append(0.0)
        return np.asarray(rates, dtype=float)

    @cached_property
    def _cum(self) -> np.ndarray:
        widths = np.diff(self._edges)
        return np.concatenate([[0.0], np.cumsum(self._step_rates * widths)])

    def _piece_index(self, y: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._edges, y, side="left")
        return np.clip(idx, 1, len(self._edges) - 1) - 1

    def _check_domain(self, arr: np.ndarray) -> None:
        if np.any(arr < self.y0) or np.any(arr > self.y_max):
            raise ValueError(
                f"level outside the tested range [{self.y0}, {self.y_max}]"
            )

    def segments(self):
        """Yield ``(lo, hi, rate)`` for every effective piece."""
        self.require_valid()
        edges = self._edges
        for i, k in enumerate(self._step_rates):
            yield float(edges[i]), float(edges[i + 1]), float(k)

    # -- evaluation --------------------------------------------------------

    def rate_at(self, y):
        """Detection rate at danger level ``y`` (scalar or array)."""
        self.require_valid()
        arr = np.asarray(y, dtype=float)
        self._check_domain(arr)
        out = self._step_rates[self._piece_index(arr)]
        return float(out) if np.ndim(y) == 0 else out

    def cumulative(self, y):
        """Integral of the rate from ``y0`` up to ``y``.

        Exact per-piece arithmetic; differences of this function give
        interval integrals that are additive to the last bit.
        """
        self.require_valid()
        arr = np.asarray(y, dtype=float)
        self._check_domain(arr)
        idx = self._piece_index(arr)
        out = self._cum[idx] + self._step_rates[idx] * (arr - self._edges[idx])
        return float(out) if np.ndim(y) == 0 else out

    def integrate(self, a: float, b: float) -> float:
        """Integral of the rate over ``[a, b]`` within the tested range."""
        if b < a:
            raise ValueError("integration bounds out of order")
        return self.cumulative(b) - self.cumulative(a)

    def level_at_cumulative(self, q):
        """Smallest level whose cumulative integral reaches ``q``.

        Zero-rate stretches are flat in the cumulative, so the inverse
        skips over them to the first level where mass accrues again.
        """
        self.require_valid()
        arr = np.asarray(q, dtype=float)
        total = self._cum[-1]
        if np.any(arr < 0) or np.any(arr > total * (1 + 1e-12) + 1e-300):
            raise ValueError("cumulative value outside [0, total mass]")
        arr = np.minimum(arr, total)
        j = np.clip(np.searchsorted(self._cum, arr, side="left"), 1, len(self._cum) - 1)
        k = self._step_rates[j - 1]
        safe_k = np.where(k > 0, k, 1.0)
        frac = np.where(k > 0, (arr - self._cum[j - 1]) / safe_k, 0.0)
        out = np.minimum(self._edges[j - 1] + frac, self._edges[j])
        return float(out) if np.ndim(q) == 0 else out

    def pieces_between(self, a: float, b: float):
        """Edges and per-piece rates of the restriction to ``[a, b]``.

        Returns ``(edges, rates)`` with ``edges[0] == a``, ``edges[-1] == b``
        and ``rates[i]`` applying on ``(edges[i], edges[i+1]]``.
        """
        self.require_valid()
        if not self.y0 <= a < b <= self.y_max:
            raise ValueError("piece bounds outside the tested range")
        inner = self._edges[(self._edges > a) & (self._edges < b)]
        edges = np.concatenate([[a], inner, [b]])
        rates = self._step_rates[self._piece_index(edges[1:])]
        return edges, rates

    # -- construction of evolved suites -------------------------------------

    def with_block(self, lo: float, hi: float, delta: float) -> "RateFunction":
        """New function with ``delta`` added to the rate on ``(lo, hi]``."""
        self.require_valid()
        if not self.y0 <= lo < hi <= self.y_max:
            raise ValueError("block outside the tested range")
        if delta < 0:
            raise ValueError("rate increments are non-negative")
        edges = np.unique(np.concatenate([self._edges, [lo, hi]]))
        uppers = edges[1:]
        new_rates = self._step_rates[self._piece_index(uppers)].copy()
        new_rates[(uppers > lo) & (uppers <= hi)] += delta
        # coalesce equal-rate neighbours to keep the step count bounded
        keep = np.concatenate([new_rates[:-1] != new_rates[1:], [True]])
        return RateFunction(
            endpoints=tuple(uppers[keep]),
            rates=tuple(new_rates[keep]),
            y_max=self.y_max,
            y0=self.y0,
        )

    def lowest_difference(self, other: "RateFunction") -> float | None:
        """Lowest danger level at which the two step functions differ.

        Levels beyond a function's own ``y_max`` count as rate zero, so
        suites over different ranges still compare. Returns ``None`` when
        the functions agree everywhere.
        """
        self.require_valid()
        other.require_valid()
        if self.y0 != other.y0:
            return min(self.y0, other.y0)
        top = max(self.y_max, other.y_max)
        edges = np.unique(np.concatenate([self._edges, other._edges, [top]]))
        uppers = edges[1:]

        def rates_on(f: "RateFunction") -> np.ndarray:
            out = np.zeros_like(uppers)
            inside = uppers <= f.y_max
            out[inside] = f._step_rates[f._piece_index(uppers[inside])]
            return out

        differ = rates_on(self) != rates_on(other)
        if not differ.any():
            return None
        return float(edges[:-1][differ][0])
