"""B-spline basis over recruitment time, with knots at period or calendar starts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import CalendarPartition, ConfigError

DEGREES = (1, 2, 3)


@dataclass(frozen=True)
class SplineBasis:
    """Degree-q B-spline basis on [t_min, t_max] with the given inner knots."""

    degree: int
    inner_knots: tuple[float, ...]
    boundary: tuple[float, float]

    def __post_init__(self):
        if self.degree not in DEGREES:
            raise ConfigError(f"spline degree must be one of {DEGREES}, got {self.degree}")
        lo, hi = self.boundary
        if not lo < hi:
            raise ConfigError(f"boundary knots must satisfy t_min < t_max, got {self.boundary}")
        if any(k2 <= k1 for k1, k2 in zip(self.inner_knots, self.inner_knots[1:])):
            raise ConfigError("inner knots must be strictly increasing")
        if any(not lo < k < hi for k in self.inner_knots):
            raise ConfigError("inner knots must lie strictly inside the boundary")

    @property
    def dim(self) -> int:
        return len(self.inner_knots) + self.degree + 1

    def padded_knots(self) -> np.ndarray:
        lo, hi = self.boundary
        rep = self.degree + 1  # boundary knots repeated q+1 times
        return np.array([lo] * rep + list(self.inner_knots) + [hi] * rep, dtype=float)


def _clean_inner(candidates: Sequence[float], lo: float, hi: float) -> tuple[float, ...]:
    # duplicates and knots on/outside the boundary would create singular columns
    return tuple(sorted({float(k) for k in candidates if lo < k < hi}))


def knots_from_periods(
    period_starts: Sequence[float], horizon: float, degree: int = 3
) -> SplineBasis:
    """Basis with one polynomial piece per period: inner knots at period starts 2..S."""
    lo = float(period_starts[0])
    inner = _clean_inner(period_starts[1:], lo, horizon)
    return SplineBasis(degree=degree, inner_knots=inner, boundary=(lo, float(horizon)))


def knots_from_calendar(partition: CalendarPartition, degree: int = 3) -> SplineBasis:
    """Basis with equidistant inner knots at calendar-unit starts 2..C."""
    lo = float(partition.boundaries[0])
    inner = _clean_inner(partition.boundaries[1:], lo, partition.horizon)
    return SplineBasis(degree=degree, inner_knots=inner, boundary=(lo, float(partition.horizon)))


def basis_matrix(times: np.ndarray, basis: SplineBasis) -> np.ndarray:
    """Evaluate all basis functions at the given times (Cox-de Boor recursion).

    Returns an array of shape (len(times), basis.dim); each row sums to 1.
    The final interval is closed on the right so t == t_max is valid.
    """
    t = np.asarray(times, dtype=float)
    lo, hi = basis.boundary
    if t.size and (t.min() < lo or t.max() > hi):
        raise ConfigError(f"spline evaluated outside boundary [{lo}, {hi}]")
    knots = basis.padded_knots()
    q = basis.degree
    n_spans = knots.size - 1
    B = np.zeros((t.size, n_spans))
    for i in range(n_spans):
        if knots[i] < knots[i + 1]:
            if knots[i + 1] == hi:
                B[:, i] = (t >= knots[i]) & (t <= knots[i + 1])
            else:
                B[:, i] = (t >= knots[i]) & (t < knots[i + 1])
    for d in range(1, q + 1):
        nxt = np.zeros((t.size, n_spans - d))
        for i in range(n_spans - d):
            left_den = knots[i + d] - knots[i]
            right_den = knots[i + d + 1] - knots[i + 1]
            acc = 0.0
            if left_den > 0:
                acc = (t - knots[i]) / left_den * B[:, i]
            if right_den > 0:
                acc = acc + (knots[i + d + 1] - t) / right_den * B[:, i + 1]
            nxt[:, i] = acc
        B = nxt
    return B
