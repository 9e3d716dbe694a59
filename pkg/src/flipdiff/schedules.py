"""Time grids and flip-count schedules for discretized backward sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIME_KINDS = ("linear", "quadratic", "cosine")
FLIP_KINDS = ("constant", "linear")


@dataclass(frozen=True)
class TimeSchedule:
    """Strictly increasing grid 0 = t_0 < ... < t_K over backward time."""

    kind: str
    n_steps: int
    horizon: float
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid[0] != 0.0 or grid[-1] != self.horizon:
            raise ValueError("grid endpoints must be exactly 0 and the horizon")
        if not (np.diff(grid) > 0).all():
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def max_step(self) -> float:
        return float(self.steps.max())


def time_grid(kind: str, n_steps: int, t_f: float, eta: float = 0.0) -> TimeSchedule:
    """Build a K-step schedule over [0, t_f - eta].

    kinds: linear  t_k = T k/K; quadratic  t_k = T (k/K)^2;
    cosine  t_k = T cos((1 - k/K) pi/2), with T = t_f - eta. Endpoints are
    forced exact (cos(pi/2) is not exactly 0 in floating point).
    """
    if kind not in TIME_KINDS:
        raise ValueError(f"unknown time schedule kind {kind!r}; expected one of {TIME_KINDS}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not 0.0 <= eta < t_f:
        raise ValueError("early-stop eta must satisfy 0 <= eta < t_f")
    end = t_f - eta
    frac = np.arange(n_steps + 1) / n_steps
    if kind == "linear":
        grid = end * frac
    elif kind == "quadratic":
        grid = end * frac**2
    else:
        grid = end * np.cos((1.0 - frac) * np.pi / 2.0)
    grid[0], grid[-1] = 0.0, end
    return TimeSchedule(kind=kind, n_steps=n_steps, horizon=end, grid=grid)


@dataclass(frozen=True)
class FlipSchedule:
    """Bits to flip per grid step; counts[k] belongs to interval [t_k, t_{k+1})."""

    kind: str
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if (counts < 0).any():
            raise ValueError("flip counts must be >= 0")
        if counts.sum() != self.total:
            raise ValueError("flip counts must sum to the configured total")
        object.__setattr__(self, "counts", counts)


def _largest_remainder(quota: np.ndarray, total: int) -> np.ndarray:
    """Round nonnegative quotas to integers preserving their exact sum."""
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    if short:
        # ties broken toward lower index for determinism
        order = np.lexsort((np.arange(quota.size), -(quota - base)))
        base[order[:short]] += 1
    return base


def flip_counts(kind: str, schedule: TimeSchedule, total: int) -> FlipSchedule:
    """Distribute ``total`` bit flips over the K steps of a schedule.

    constant: as equal as possible; linear: proportional to the grid time
    t_{k+1} of each step, with largest-remainder rounding so the sum is exact.
    """
    if kind not in FLIP_KINDS:
        raise ValueError(f"unknown flip schedule kind {kind!r}; expected one of {FLIP_KINDS}")
    if total < 0:
        raise ValueError("total must be >= 0")
    k = schedule.n_steps
    if kind == "constant":
        quota = np.full(k, total / k)
    else:
        weights = schedule.grid[1:]
        quota = total * weights / weights.sum()
    counts = _largest_remainder(quota, total)
    return FlipSchedule(kind=kind, counts=counts, total=total)
