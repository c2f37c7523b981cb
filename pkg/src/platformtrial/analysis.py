"""Estimator front end: maps (dataset, evaluated arm, model spec) to a fit result."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mixed_model, spline
from .datagen import TrialDataset
from .design import ConfigError, derive_calendar, derive_periods
from .regression_engine import WaldTest, build_design, ols_fit, t_sf, wald_test

ESTIMATORS = (
    "fixed_period",
    "fixed_calendar",
    "spline_period",
    "spline_calendar",
    "mixed_period",
    "mixed_calendar",
    "mixed_period_ar1",
    "mixed_calendar_ar1",
    "mixedint_period",
    "mixedint_calendar",
    "pooled",
    "separate",
)

RESULT_FIELDS = ("estimator", "arm", "theta_hat", "se", "p_one", "p_two", "reject")


@dataclass(frozen=True)
class ModelSpec:
    """Choice of estimator plus its options."""

    estimator: str
    c_length: float | None = None
    spline_degree: int = 3
    alpha: float = 0.025
    sided: str = "one_greater"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if "calendar" in self.estimator and (self.c_length is None or self.c_length < 1):
            raise ConfigError(f"{self.estimator} requires c_length >= 1")
        if self.estimator.startswith("spline") and self.spline_degree not in spline.DEGREES:
            raise ConfigError(f"spline degree must be one of {spline.DEGREES}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.sided not in ("one_greater", "two"):
            raise ConfigError(f"sided must be 'one_greater' or 'two', got {self.sided!r}")

    @property
    def label(self) -> str:
        if self.estimator.startswith("spline"):
            return f"{self.estimator}_q{self.spline_degree}"
        return self.estimator


@dataclass(frozen=True)
class FitResult:
    estimator: str
    arm: int
    theta_hat: float
    se: float
    t: float
    p_one: float
    p_two: float
    reject: bool
    diagnostics: dict = field(default_factory=dict)


def default_model_set(c_length: float, spline_degree: int = 3, **opts) -> tuple[ModelSpec, ...]:
    """The standard analysis battery: fixed, mixed (calendar), spline, baselines."""
    return (
        ModelSpec("fixed_period", **opts),
        ModelSpec("fixed_calendar", c_length=c_length, **opts),
        ModelSpec("mixed_calendar", c_length=c_length, **opts),
        ModelSpec("mixed_calendar_ar1", c_length=c_length, **opts),
        ModelSpec("spline_period", spline_degree=spline_degree, **opts),
        ModelSpec("spline_calendar", c_length=c_length, spline_degree=spline_degree, **opts),
        ModelSpec("pooled", **opts),
        ModelSpec("separate", **opts),
    )


@dataclass(frozen=True)
class _Prepared:
    t: np.ndarray
    arm: np.ndarray
    y: np.ndarray
    horizon: float
    origin: float
    treatments: tuple[int, ...]
    m_entry: float


def _prepare(dataset: TrialDataset, m: int) -> _Prepared:
    if m < 1:
        raise ConfigError("the evaluated arm must be an experimental arm (>= 1)")
    in_arm = dataset.arm == m
    if not in_arm.any():
        raise ConfigError(f"arm {m} has no records in the analysis set")
    horizon = float(dataset.t[in_arm].max())
    if float(dataset.t.max()) > horizon:
        raise ConfigError(
            "analysis set contains records after the evaluated arm's exit; use slice_for_arm"
        )
    treatments = tuple(sorted(int(k) for k in np.unique(dataset.arm) if k != 0))
    tl = dataset.timeline
    m_entry = tl.entry[m - 1] if tl is not None and m <= len(tl.entry) else float(
        dataset.t[in_arm].min()
    )
    return _Prepared(
        t=np.asarray(dataset.t, dtype=float),
        arm=np.asarray(dataset.arm),
        y=np.asarray(dataset.y, dtype=float),
        horizon=horizon,
        origin=float(dataset.t.min()),
        treatments=treatments,
        m_entry=float(m_entry),
    )


def _period_starts(dataset: TrialDataset, prep: _Prepared) -> tuple[float, ...]:
    tl = dataset.timeline
    return derive_periods(tl.entry, tl.exit, prep.horizon, origin=prep.origin)


def _two_sample_t(y_trt, y_ctl, m: int, estimator: str, alpha: float, sided: str, extra=None):
    n1, n0 = y_trt.size, y_ctl.size
    if n0 == 0:
        raise ConfigError("no control records available for the t-test")
    if n1 + n0 < 3:
        raise ConfigError("too few observations for a two-sample t-test")
    diff = float(y_trt.mean() - y_ctl.mean())
    ss1 = float(((y_trt - y_trt.mean()) ** 2).sum())
    ss0 = float(((y_ctl - y_ctl.mean()) ** 2).sum())
    df = n1 + n0 - 2
    s2p = (ss1 + ss0) / df
    se = math.sqrt(s2p * (1.0 / n1 + 1.0 / n0))
    if se == 0.0:
        raise ConfigError("degenerate t-test: zero pooled standard error")
    t = diff / se
    p_one = t_sf(t, df)
    p_two = 2.0 * t_sf(abs(t), df)
    diag = {"df": df, "n_treatment": n1, "n_controls": n0}
    if extra:
        diag.update(extra)
    return FitResult(
        estimator=estimator,
        arm=m,
        theta_hat=diff,
        se=se,
        t=t,
        p_one=p_one,
        p_two=p_two,
        reject=(p_one if sided == "one_greater" else p_two) < alpha,
        diagnostics=diag,
    )


def pooled_ttest(
    dataset: TrialDataset, m: int, alpha: float = 0.025, sided: str = "one_greater"
) -> FitResult:
    """Arm m versus every control record in the analysis set."""
    prep = _prepare(dataset, m)
    return _two_sample_t(
        prep.y[prep.arm == m], prep.y[prep.arm == 0], m, "pooled", alpha, sided
    )


def separate_ttest(
    dataset: TrialDataset, m: int, alpha: float = 0.025, sided: str = "one_greater"
) -> FitResult:
    """Arm m versus its concurrent controls only (randomized from arm m's entry on)."""
    prep = _prepare(dataset, m)
    concurrent = (prep.arm == 0) & (prep.t >= prep.m_entry)
    return _two_sample_t(
        prep.y[prep.arm == m],
        prep.y[concurrent],
        m,
        "separate",
        alpha,
        sided,
        extra={"n_controls_concurrent": int(concurrent.sum())},
    )


def _from_wald(label, m, fit, wt: WaldTest, diag) -> FitResult:
    i = fit.columns.index(f"trt{m}")
    return FitResult(
        estimator=label,
        arm=m,
        theta_hat=float(fit.beta[i]),
        se=float(math.sqrt(fit.cov[i, i])),
        t=wt.t,
        p_one=wt.p_one,
        p_two=wt.p_two,
        reject=wt.reject,
        diagnostics=diag,
    )


def fit(dataset: TrialDataset, m: int, spec: ModelSpec) -> FitResult:
    """Fit one estimator to the analysis set of arm m."""
    if spec.estimator == "pooled":
        return pooled_ttest(dataset, m, alpha=spec.alpha, sided=spec.sided)
    if spec.estimator == "separate":
        return separate_ttest(dataset, m, alpha=spec.alpha, sided=spec.sided)

    prep = _prepare(dataset, m)
    coeff = f"trt{m}"
    base = spec.estimator.rsplit("_", 1)[0] if spec.estimator.endswith("_ar1") else spec.estimator
    family, timescale = base.split("_")
    if timescale == "period":
        starts = _period_starts(dataset, prep)
        prefix = "per"
    else:
        starts = derive_calendar(prep.horizon, spec.c_length, start=prep.origin).boundaries
        prefix = "cal"
    n_intervals = len(starts)

    if family == "fixed":
        dm = build_design(
            prep.t, prep.arm, prep.y, prep.treatments,
            adjustment=timescale, starts=starts, horizon=prep.horizon,
        )
        ols = ols_fit(dm)
        wt = wald_test(ols, coeff, sided=spec.sided, alpha=spec.alpha)
        diag = {"df": ols.df, "n_obs": len(dm.y), "n_columns": dm.X.shape[1],
                "n_intervals": n_intervals}
        return _from_wald(spec.label, m, ols, wt, diag)

    if family == "spline":
        if timescale == "period":
            basis = spline.knots_from_periods(starts, prep.horizon, degree=spec.spline_degree)
        else:
            basis = spline.knots_from_calendar(
                derive_calendar(prep.horizon, spec.c_length, start=prep.origin),
                degree=spec.spline_degree,
            )
        dm = build_design(
            prep.t, prep.arm, prep.y, prep.treatments, adjustment="spline", basis=basis
        )
        ols = ols_fit(dm)
        wt = wald_test(ols, coeff, sided=spec.sided, alpha=spec.alpha)
        diag = {"df": ols.df, "n_obs": len(dm.y), "n_columns": dm.X.shape[1],
                "n_intervals": n_intervals, "spline_degree": spec.spline_degree,
                "n_inner_knots": len(basis.inner_knots)}
        return _from_wald(spec.label, m, ols, wt, diag)

    if family in ("mixed", "mixedint"):
        interaction = family == "mixedint"
        fixed_adjustment = timescale if interaction else "none"
        dm = build_design(
            prep.t, prep.arm, prep.y, prep.treatments,
            adjustment=fixed_adjustment, starts=starts, horizon=prep.horizon,
        )
        structure = "ar1" if spec.estimator.endswith("_ar1") else "independent"
        try:
            Z, _ = mixed_model.build_random_design(
                prep.t, prep.arm,
                grouping="interaction" if interaction else "interval",
                starts=starts, horizon=prep.horizon, prefix=prefix,
                treatments=prep.treatments if interaction else None,
                exclude_arm=m if interaction else None,
            )
        except mixed_model.DegenerateRandomDesign:
            ols = ols_fit(dm)
            wt = wald_test(ols, coeff, sided=spec.sided, alpha=spec.alpha)
            diag = {"df": ols.df, "n_obs": len(dm.y), "n_columns": dm.X.shape[1],
                    "n_intervals": n_intervals, "fallback": "ols_single_interval",
                    "converged": True}
            return _from_wald(spec.label, m, ols, wt, diag)
        mfit = mixed_model.reml_fit(dm.X, Z, dm.y, cov_structure=structure, columns=dm.columns)
        wt = mixed_model.mixed_wald_test(mfit, coeff, sided=spec.sided, alpha=spec.alpha)
        diag = {"df": mfit.df, "n_obs": len(dm.y), "n_columns": dm.X.shape[1],
                "n_intervals": n_intervals, "n_random_columns": Z.shape[1],
                "sigma2_random": mfit.sigma2_random, "converged": mfit.converged,
                "iterations": mfit.iterations}
        if mfit.rho is not None:
            diag["rho"] = mfit.rho
        return _from_wald(spec.label, m, mfit, wt, diag)

    raise ConfigError(f"unknown estimator {spec.estimator!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Result serialization
# ---------------------------------------------------------------------------

def _result_row(r: FitResult, diag_keys: Sequence[str]) -> dict:
    row = {
        "estimator": r.estimator,
        "arm": r.arm,
        "theta_hat": r.theta_hat,
        "se": r.se,
        "p_one": r.p_one,
        "p_two": r.p_two,
        "reject": r.reject,
    }
    for k in diag_keys:
        row[f"diag_{k}"] = r.diagnostics.get(k, "")
    return row


def results_table(results: Sequence[FitResult]) -> tuple[list[str], list[dict]]:
    diag_keys = sorted({k for r in results for k in r.diagnostics})
    header = list(RESULT_FIELDS) + [f"diag_{k}" for k in diag_keys]
    return header, [_result_row(r, diag_keys) for r in results]


def results_to_csv(results: Sequence[FitResult], path) -> None:
    header, rows = results_table(results)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def results_to_json(results: Sequence[FitResult], path) -> None:
    _, rows = results_table(results)
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, default=str)
        fh.write("\n")
