"""Trial layout: arm entry/exit schedule and the two time partitions.

Time is measured in enrolled patients (one patient per time unit), so all
times are 1-based indices into the recruitment stream. Real-valued times
are accepted for imported datasets; the same half-open interval convention
applies.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid trial or partition configuration."""


@dataclass(frozen=True)
class TrialConfig:
    """Design parameters of a staggered platform trial.

    K experimental arms plus a shared control; arm k becomes eligible after
    d*(k-1) patients have been enrolled (arm 1 is present from the start).
    """

    K: int
    d: int
    n: int
    eta0: float
    theta: tuple[float, ...]
    sigma: float
    M: int

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.d < 0:
            raise ConfigError(f"d must be >= 0, got {self.d}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not 1 <= self.M <= self.K:
            raise ConfigError(f"M must be in 1..{self.K}, got {self.M}")
        if len(self.theta) != self.K:
            raise ConfigError(
                f"theta must have one entry per arm ({self.K}), got {len(self.theta)}"
            )


@dataclass(frozen=True)
class TrialTimeline:
    """Realized entry/exit times of all arms and the full-trial period grid.

    ``entry[k-1]`` is the first time arm k is eligible for randomization,
    ``exit[k-1]`` the time its last patient was enrolled. ``period_starts``
    covers the whole trial, i.e. the partition at horizon ``n_total``.
    """

    entry: tuple[float, ...]
    exit: tuple[float, ...]
    period_starts: tuple[float, ...]
    n_total: int

    def __post_init__(self):
        if any(b < a for a, b in zip(self.entry, self.entry[1:])):
            raise ConfigError("entry times must be nondecreasing in arm index")
        # equality only occurs for single-record arms in imported data
        if any(x < e for e, x in zip(self.entry, self.exit)):
            raise ConfigError("each exit time must come after the arm's entry")


@dataclass(frozen=True)
class CalendarPartition:
    """Fixed-length calendar units covering [start of trial, horizon]."""

    c_length: float
    boundaries: tuple[float, ...]
    horizon: float

    @property
    def n_intervals(self) -> int:
        return len(self.boundaries)


def entry_times(config: TrialConfig) -> tuple[int, ...]:
    """Eligibility time of each arm under uniform one-per-unit recruitment."""
    return tuple(config.d * (k - 1) + 1 for k in range(1, config.K + 1))


def derive_periods(
    entries: Sequence[float],
    exits: Sequence[float],
    horizon: float,
    origin: float = 1.0,
) -> tuple[float, ...]:
    """Period start times at the given analysis horizon.

    Every arm entry at or before the horizon and every arm exit strictly
    before it opens a new period; the trial start (``origin``) always does.
    """
    if len(entries) == 0 or min(entries) > horizon:
        raise ConfigError("no arms active before the analysis horizon")
    starts = {origin}
    starts.update(e for e in entries if origin < e <= horizon)
    starts.update(x for x in exits if origin < x < horizon)
    return tuple(sorted(starts))


def derive_calendar(horizon: float, c_length: float, start: float = 1.0) -> CalendarPartition:
    """Equidistant calendar units of size ``c_length``, cut at the horizon.

    The final unit is whatever is left before the horizon, so it is usually
    shorter than ``c_length``.
    """
    if c_length < 1:
        raise ConfigError(f"c_length must be >= 1, got {c_length}")
    if horizon < start:
        raise ConfigError(f"horizon {horizon} lies before trial start {start}")
    boundaries = []
    i = 0
    while True:
        b = start + i * c_length  # multiply, not accumulate: no float drift
        if b > horizon:
            break
        boundaries.append(b)
        i += 1
    return CalendarPartition(c_length=c_length, boundaries=tuple(boundaries), horizon=horizon)


def interval_index(t: float, starts: Sequence[float], horizon: float) -> int:
    """1-based index of the half-open interval [start_i, start_{i+1}) holding t.

    The last interval is closed on the right so that t == horizon maps to it.
    """
    if t < starts[0] or t > horizon:
        raise ConfigError(f"time {t} outside partition range [{starts[0]}, {horizon}]")
    return bisect_right(starts, t)


def interval_indices(times: np.ndarray, starts: Sequence[float], horizon: float) -> np.ndarray:
    """Vectorized :func:`interval_index`."""
    times = np.asarray(times, dtype=float)
    if times.size and (times.min() < starts[0] or times.max() > horizon):
        raise ConfigError("times outside partition range")
    return np.searchsorted(np.asarray(starts, dtype=float), times, side="right")
