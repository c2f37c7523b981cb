"""Trial data generation: block randomization, time trends, normal responses."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .design import ConfigError, TrialConfig, TrialTimeline, derive_periods, entry_times

TREND_PATTERNS = ("none", "linear", "stepwise", "inverted_u", "seasonal")

CSV_HEADER = ("j", "arm", "time", "response")


@dataclass(frozen=True)
class TrendSpec:
    """Shape and per-arm strength of the systematic drift in mean response.

    ``lam`` holds K+1 strengths, index 0 being the control arm. ``n_p`` is
    the turning point of the inverted-U pattern (in patients), ``psi`` the
    cycle count of the seasonal pattern.
    """

    pattern: str
    lam: tuple[float, ...]
    n_p: int | None = None
    psi: float | None = None

    def __post_init__(self):
        if self.pattern not in TREND_PATTERNS:
            raise ConfigError(f"unknown trend pattern {self.pattern!r}")
        if self.pattern == "inverted_u":
            if self.n_p is None or self.n_p <= 1:
                raise ConfigError("inverted_u trend requires a turning point n_p > 1")
        if self.pattern == "seasonal":
            if self.psi is None or self.psi <= 0:
                raise ConfigError("seasonal trend requires a cycle count psi > 0")

    @classmethod
    def none(cls, n_arms: int) -> "TrendSpec":
        return cls(pattern="none", lam=(0.0,) * (n_arms + 1))


@dataclass(frozen=True)
class PatientRecord:
    j: int
    arm: int
    t: float
    y: float


@dataclass(frozen=True)
class TrialDataset:
    """Column-oriented patient records plus the realized timeline.

    ``t`` equals ``j`` for generated data; imported real-world data may
    carry non-uniform times. ``n_target`` is the per-arm sample size used
    at generation (None for imported data).
    """

    j: np.ndarray
    arm: np.ndarray
    t: np.ndarray
    y: np.ndarray
    timeline: TrialTimeline
    seed: int | None = None
    n_target: int | None = None

    def __len__(self) -> int:
        return self.j.size

    def records(self) -> Iterator[PatientRecord]:
        for i in range(self.j.size):
            yield PatientRecord(int(self.j[i]), int(self.arm[i]), float(self.t[i]), float(self.y[i]))

    def arm_count(self, k: int) -> int:
        return int(np.count_nonzero(self.arm == k))


def arms_entered_by(times, entries: Sequence[float]):
    """Number of experimental arms that have entered at each time (i_j)."""
    return np.searchsorted(np.sort(np.asarray(entries, dtype=float)), np.asarray(times, dtype=float), side="right")


def trend_value(pattern, j, lam_k, n_total, n_p=None, psi=None, arms_entered=None):
    """Trend contribution f(j) for one or many patients.

    All patterns except ``stepwise`` rescale patient index to (j-1)/(N-1);
    ``stepwise`` jumps by lam_k whenever a new arm enters (``arms_entered``
    counts the arms that entered up to and including time j).
    """
    j = np.asarray(j, dtype=float)
    lam_k = np.asarray(lam_k, dtype=float)
    if pattern == "none":
        return np.zeros(np.broadcast(j, lam_k).shape) if j.ndim or lam_k.ndim else 0.0
    if n_total < 2:
        raise ConfigError("trend formulas need a total sample size of at least 2")
    frac = (j - 1.0) / (n_total - 1.0)
    if pattern == "linear":
        out = lam_k * frac
    elif pattern == "seasonal":
        if psi is None or psi <= 0:
            raise ConfigError("seasonal trend requires psi > 0")
        out = lam_k * np.sin(psi * 2.0 * np.pi * frac)
    elif pattern == "inverted_u":
        if n_p is None or not 1 < n_p < n_total:
            raise ConfigError("inverted_u trend requires 1 < n_p < N")
        rising = lam_k * frac
        falling = -lam_k * (j - n_p) / (n_total - 1.0) + lam_k * (n_p - 1.0) / (n_total - 1.0)
        out = np.where(j <= n_p, rising, falling)
    elif pattern == "stepwise":
        if arms_entered is None:
            raise ConfigError("stepwise trend requires the entered-arm count i_j")
        out = lam_k * (np.asarray(arms_entered, dtype=float) - 1.0)
    else:
        raise ConfigError(f"unknown trend pattern {pattern!r}")
    return out if out.ndim else float(out)


def block_randomize(active_arms: Iterable[int], rng: np.random.Generator) -> Iterator[int]:
    """Infinite assignment stream for a fixed set of active experimental arms.

    Each block contains the control and every active arm exactly twice, in
    uniformly shuffled order (block size 2*(n_active+1)). The caller starts
    a fresh stream whenever the active-arm set changes.
    """
    members = np.array([0] + sorted(active_arms), dtype=np.int64).repeat(2)
    while True:
        yield from rng.permutation(members)


def _resolve_effects(config: TrialConfig, hypothesis) -> np.ndarray:
    """Per-arm treatment effects (index 0 = control) under the hypothesis."""
    if isinstance(hypothesis, str):
        if hypothesis == "null":
            flags = (False,) * config.K
        elif hypothesis == "alternative":
            flags = (True,) * config.K
        else:
            raise ConfigError(f"hypothesis must be 'null' or 'alternative', got {hypothesis!r}")
    else:
        flags = tuple(bool(f) for f in hypothesis)
        if len(flags) != config.K:
            raise ConfigError(f"need one hypothesis flag per arm ({config.K})")
    effects = np.zeros(config.K + 1)
    for k, on in enumerate(flags, start=1):
        if on:
            effects[k] = config.theta[k - 1]
    return effects


def _assign_all(config: TrialConfig, rng: np.random.Generator):
    """Run the full randomization stream until every arm reaches n patients."""
    entries = entry_times(config)
    counts = [0] * (config.K + 1)
    exits = [0] * config.K
    remaining = config.K
    entry_set = set(entries)
    assignments: list[int] = []
    active: tuple[int, ...] = ()
    stream: Iterator[int] | None = None
    j = 0
    refresh = True
    while remaining:
        j += 1
        if refresh or j in entry_set:
            now_active = tuple(
                k for k in range(1, config.K + 1) if entries[k - 1] <= j and counts[k] < config.n
            )
            if now_active != active or stream is None:
                active = now_active
                # partial block from the previous arm set is discarded
                stream = block_randomize(active, rng) if active else None
            refresh = False
        if stream is None:
            arm = 0  # no experimental arm recruiting: everyone goes to control
        else:
            arm = int(next(stream))
        counts[arm] += 1
        assignments.append(arm)
        if arm != 0 and counts[arm] == config.n:
            exits[arm - 1] = j
            remaining -= 1
            refresh = True
    return np.asarray(assignments, dtype=np.int64), entries, tuple(exits)


def generate_trial(
    config: TrialConfig,
    trend: TrendSpec,
    hypothesis="alternative",
    seed: int | np.random.SeedSequence = 0,
) -> TrialDataset:
    """Generate one trial replicate.

    Patients arrive one per time unit; arm k recruits from its entry time
    until it holds n patients; the trial stops once every arm is complete.
    The response is control mean + treatment effect + trend + N(0, sigma^2)
    noise. Randomization and noise use separate sub-streams of ``seed``, so
    identical seeds give bit-identical datasets.
    """
    if len(trend.lam) != config.K + 1:
        raise ConfigError(
            f"trend needs K+1={config.K + 1} strengths (control first), got {len(trend.lam)}"
        )
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ss_assign, ss_noise = ss.spawn(2)
    arm, entries, exits = _assign_all(config, np.random.default_rng(ss_assign))
    n_total = arm.size
    j = np.arange(1, n_total + 1, dtype=np.int64)

    lam_by_arm = np.asarray(trend.lam, dtype=float)
    f = trend_value(
        trend.pattern,
        j,
        lam_by_arm[arm],
        n_total,
        n_p=trend.n_p,
        psi=trend.psi,
        arms_entered=arms_entered_by(j, entries) if trend.pattern == "stepwise" else None,
    )
    effects = _resolve_effects(config, hypothesis)
    noise = np.random.default_rng(ss_noise).standard_normal(n_total)
    y = config.eta0 + effects[arm] + np.asarray(f, dtype=float) + config.sigma * noise

    timeline = TrialTimeline(
        entry=tuple(float(e) for e in entries),
        exit=tuple(float(x) for x in exits),
        period_starts=derive_periods(entries, exits, horizon=n_total),
        n_total=n_total,
    )
    root = seed if isinstance(seed, int) else None
    return TrialDataset(
        j=j, arm=arm, t=j.astype(float), y=y, timeline=timeline, seed=root, n_target=config.n
    )


def slice_for_arm(dataset: TrialDataset, m: int) -> TrialDataset:
    """Analysis data cut for arm m: every record up to arm m's exit time.

    Partial data of arms still recruiting at that time is kept.
    """
    if m < 1:
        raise ConfigError("the evaluated arm must be an experimental arm (>= 1)")
    in_arm = dataset.arm == m
    if not in_arm.any():
        raise ConfigError(f"arm {m} has no records in the dataset")
    if dataset.n_target is not None and int(in_arm.sum()) < dataset.n_target:
        raise ConfigError(
            f"arm {m} incomplete: {int(in_arm.sum())} of {dataset.n_target} patients"
        )
    horizon = float(dataset.t[in_arm].max())
    keep = dataset.t <= horizon
    return replace(
        dataset,
        j=dataset.j[keep],
        arm=dataset.arm[keep],
        t=dataset.t[keep],
        y=dataset.y[keep],
    )


def empirical_timeline(arm: np.ndarray, t: np.ndarray) -> TrialTimeline:
    """Timeline reconstructed from observed data (for imported datasets).

    An arm's entry is its first observed time and its exit its last one;
    arms whose last record coincides with the data horizon are treated as
    still active there.
    """
    arms = sorted(int(k) for k in np.unique(arm) if k != 0)
    if not arms:
        raise ConfigError("dataset contains no experimental-arm records")
    if arms != list(range(1, len(arms) + 1)):
        raise ConfigError(
            f"experimental arms must be labeled 1..K without gaps, got {arms}"
        )
    entries = tuple(float(t[arm == k].min()) for k in arms)
    exits = tuple(float(t[arm == k].max()) for k in arms)
    horizon = float(t.max())
    origin = float(t.min())
    return TrialTimeline(
        entry=entries,
        exit=exits,
        period_starts=derive_periods(entries, exits, horizon, origin=origin),
        n_total=int(t.size),
    )


def write_csv(dataset: TrialDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(len(dataset)):
            w.writerow(
                [int(dataset.j[i]), int(dataset.arm[i]), repr(float(dataset.t[i])), repr(float(dataset.y[i]))]
            )


def read_csv(path) -> TrialDataset:
    """Load a dataset from CSV with header ``j,arm,time,response``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from None
    with fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != list(CSV_HEADER):
            raise ConfigError(f"expected CSV header {','.join(CSV_HEADER)}")
        j, arm, t, y = [], [], [], []
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ConfigError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                j.append(int(float(row[0])))
                arm.append(int(float(row[1])))
                t.append(float(row[2]))
                y.append(float(row[3]))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: non-numeric field ({exc})") from None
    if not j:
        raise ConfigError("dataset is empty")
    arm_arr = np.asarray(arm, dtype=np.int64)
    t_arr = np.asarray(t, dtype=float)
    return TrialDataset(
        j=np.asarray(j, dtype=np.int64),
        arm=arm_arr,
        t=t_arr,
        y=np.asarray(y, dtype=float),
        timeline=empirical_timeline(arm_arr, t_arr),
    )
