"""Monte-Carlo engine: scenario runs and cartesian scenario grids.

Replicate seeds are derived counter-style from (root seed, data-scenario
hash, replicate index), so results do not depend on worker count or
scheduling, and adding estimators to a scenario never changes the data
stream.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analysis import FitResult, ModelSpec, fit
from .datagen import TrendSpec, generate_trial, slice_for_arm
from .design import ConfigError, TrialConfig

GRID_CSV_HEADER = (
    "setting", "pattern", "lambda", "d", "c_length", "estimator", "hypothesis",
    "reps", "reject_rate", "mc_se", "mean_est", "emp_se", "bias", "failures",
)

LAMBDA_PROFILES = {
    # multipliers applied to the scanned strength; index 0 is the control arm
    "equal": lambda K: (1.0,) * (K + 1),
    "arm1": lambda K: (0.0, 1.0) + (0.0,) * (K - 1),
    "arms12": lambda K: (0.0, 1.0, 1.0) + (0.0,) * (K - 2),
    "arms124": lambda K: (0.0, 1.0, 1.0, 0.0, 1.0) + (0.0,) * (K - 4),
    "arms124_graded": lambda K: (0.0, 1.0, 2.0, 0.0, 3.0) + (0.0,) * (K - 4),
}


@dataclass(frozen=True)
class Scenario:
    config: TrialConfig
    trend: TrendSpec
    estimators: tuple[ModelSpec, ...]
    hypothesis: str = "null"
    replicates: int = 1000
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.hypothesis not in ("null", "alternative"):
            raise ConfigError(f"hypothesis must be 'null' or 'alternative', got {self.hypothesis!r}")

    @property
    def true_effect(self) -> float:
        return 0.0 if self.hypothesis == "null" else float(self.config.theta[self.config.M - 1])


@dataclass(frozen=True)
class EstimatorStats:
    estimator: str
    reps: int
    reject_rate: float
    mc_se: float
    mean_est: float
    emp_se: float
    bias: float
    failures: int


@dataclass(frozen=True)
class OperatingCharacteristics:
    scenario: Scenario
    per_estimator: dict[str, EstimatorStats] = field(default_factory=dict)


def scenario_data_key(scenario: Scenario) -> int:
    """64-bit hash of the data-generating parameters (estimators excluded)."""
    cfg, tr = scenario.config, scenario.trend
    canon = "|".join(
        repr(v) for v in (
            cfg.K, cfg.d, cfg.n, cfg.eta0, tuple(cfg.theta), cfg.sigma, cfg.M,
            tr.pattern, tuple(tr.lam), tr.n_p, tr.psi, scenario.hypothesis,
        )
    )
    return int.from_bytes(hashlib.blake2b(canon.encode(), digest_size=8).digest(), "big")


def replicate_seed(scenario: Scenario, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=(int(scenario.seed), scenario_data_key(scenario), int(index))
    )


def run_replicate(scenario: Scenario, index: int) -> list[tuple[str, bool, bool, float]]:
    """One replicate: (estimator label, failed, reject, theta_hat) per estimator."""
    dataset = generate_trial(
        scenario.config, scenario.trend, scenario.hypothesis, seed=replicate_seed(scenario, index)
    )
    analysis_set = slice_for_arm(dataset, scenario.config.M)
    out = []
    for spec in scenario.estimators:
        try:
            r: FitResult = fit(analysis_set, scenario.config.M, spec)
            failed = not bool(r.diagnostics.get("converged", True))
            out.append((spec.label, failed, bool(r.reject), float(r.theta_hat)))
        except Exception as exc:  # rank deficiency etc.: recorded, never fatal
            out.append((spec.label, True, False, float("nan")))
            _ = exc
    return out


def _run_chunk(scenario: Scenario, indices: Sequence[int]):
    return [run_replicate(scenario, i) for i in indices]


def run_scenario(scenario: Scenario, threads: int = 1) -> OperatingCharacteristics:
    """Estimate rejection rate, estimate moments, and failure counts per estimator.

    Failed replicates (non-convergence or fit errors) are excluded from the
    rates and reported in ``failures``.
    """
    indices = list(range(scenario.replicates))
    if threads > 1:
        chunks = [indices[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunk_results = list(pool.map(_run_chunk, itertools.repeat(scenario), chunks))
        per_rep: list = [None] * scenario.replicates
        for chunk, results in zip(chunks, chunk_results):
            for i, res in zip(chunk, results):
                per_rep[i] = res
    else:
        per_rep = [run_replicate(scenario, i) for i in indices]

    labels = [spec.label for spec in scenario.estimators]
    per_estimator: dict[str, EstimatorStats] = {}
    for pos, label in enumerate(labels):
        rejects, estimates, failures = [], [], 0
        for rep in per_rep:
            _, failed, reject, theta = rep[pos]
            if failed:
                failures += 1
            else:
                rejects.append(reject)
                estimates.append(theta)
        n_ok = len(rejects)
        if n_ok:
            rate = sum(rejects) / n_ok
            mc_se = math.sqrt(rate * (1.0 - rate) / n_ok)
            mean_est = float(np.mean(estimates))
            emp_se = float(np.std(estimates, ddof=1)) if n_ok > 1 else float("nan")
        else:
            rate = mc_se = mean_est = emp_se = float("nan")
        per_estimator[label] = EstimatorStats(
            estimator=label,
            reps=n_ok,
            reject_rate=rate,
            mc_se=mc_se,
            mean_est=mean_est,
            emp_se=emp_se,
            bias=mean_est - scenario.true_effect if n_ok else float("nan"),
            failures=failures,
        )
    return OperatingCharacteristics(scenario=scenario, per_estimator=per_estimator)


# ---------------------------------------------------------------------------
# Scenario grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Cartesian scenario grid over trend pattern, strength, spacing, c_length."""

    setting: str
    K: int
    n: int
    M: int
    estimators: tuple[ModelSpec, ...]
    d_values: tuple[int, ...]
    patterns: tuple[str, ...]
    lambdas: tuple[float, ...]
    hypotheses: tuple[str, ...] = ("null",)
    c_lengths: tuple[float | None, ...] = (None,)
    profile: tuple[float, ...] | str = "equal"
    eta0: float = 0.0
    effect: float = 0.25
    sigma: float = 1.0
    n_p: int | None = None
    psi: float | None = None
    replicates: int = 1000
    seed: int = 0
    alpha: float = 0.025
    sided: str = "one_greater"

    def __post_init__(self):
        for name in ("estimators", "d_values", "patterns", "lambdas", "hypotheses", "c_lengths"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"empty grid: no values for {name}")

    def multipliers(self) -> tuple[float, ...]:
        if isinstance(self.profile, str):
            if self.profile not in LAMBDA_PROFILES:
                raise ConfigError(f"unknown lambda profile {self.profile!r}")
            mult = LAMBDA_PROFILES[self.profile](self.K)
        else:
            mult = tuple(float(x) for x in self.profile)
        if len(mult) != self.K + 1:
            raise ConfigError(
                f"lambda profile needs K+1={self.K + 1} multipliers, got {len(mult)}"
            )
        return mult

    def cells(self) -> list[Scenario]:
        mult = self.multipliers()
        out = []
        for hypothesis, pattern, lam, d, c_length in itertools.product(
            self.hypotheses, self.patterns, self.lambdas, self.d_values, self.c_lengths
        ):
            config = TrialConfig(
                K=self.K, d=d, n=self.n, eta0=self.eta0,
                theta=(self.effect,) * self.K, sigma=self.sigma, M=self.M,
            )
            trend = TrendSpec(
                pattern=pattern,
                lam=tuple(lam * m for m in mult),
                n_p=self.n_p if pattern == "inverted_u" else None,
                psi=self.psi if pattern == "seasonal" else None,
            )
            estimators = tuple(
                replace(spec, c_length=c_length, alpha=self.alpha, sided=self.sided)
                if "calendar" in spec.estimator
                else replace(spec, alpha=self.alpha, sided=self.sided)
                for spec in self.estimators
            )
            out.append(
                Scenario(
                    config=config, trend=trend, estimators=estimators,
                    hypothesis=hypothesis, replicates=self.replicates,
                    seed=self.seed, label=self.setting,
                )
            )
        return out


def _cell_axes(scenario: Scenario, grid: GridSpec):
    """Recover the axis values of a cell for reporting."""
    mult = grid.multipliers()
    nonzero = [m for m in mult if m != 0.0]
    lam_scalar = 0.0
    if nonzero:
        ref = nonzero[0]
        idx = mult.index(ref)
        lam_scalar = scenario.trend.lam[idx] / ref
    c_lengths = {s.c_length for s in scenario.estimators if s.c_length is not None}
    c_length = c_lengths.pop() if len(c_lengths) == 1 else None
    return lam_scalar, c_length


def run_grid(grid: GridSpec, threads: int = 1) -> list[dict]:
    """Run every cell of the grid; one output row per (cell, estimator)."""
    rows = []
    for scenario in grid.cells():
        lam_scalar, c_length = _cell_axes(scenario, grid)
        oc = run_scenario(scenario, threads=threads)
        for spec in scenario.estimators:
            st = oc.per_estimator[spec.label]
            rows.append({
                "setting": grid.setting,
                "pattern": scenario.trend.pattern,
                "lambda": lam_scalar,
                "d": scenario.config.d,
                "c_length": spec.c_length if spec.c_length is not None else c_length,
                "estimator": st.estimator,
                "hypothesis": scenario.hypothesis,
                "reps": st.reps,
                "reject_rate": st.reject_rate,
                "mc_se": st.mc_se,
                "mean_est": st.mean_est,
                "emp_se": st.emp_se,
                "bias": st.bias,
                "failures": st.failures,
            })
    return rows


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))  # plain-float repr even for numpy scalars
    return str(v)


def rows_to_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_CSV_HEADER)
        for row in rows:
            w.writerow([_format_cell(row[k]) for k in GRID_CSV_HEADER])


def rows_to_json(rows: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump(list(rows), fh, indent=2)
        fh.write("\n")
