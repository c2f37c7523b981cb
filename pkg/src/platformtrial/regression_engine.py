"""Least-squares core: design assembly, QR-based OLS, Wald t-tests.

The Student-t CDF is computed here from the regularized incomplete beta
function so that inference does not depend on an external statistical
runtime; scipy is used only for the pivoted QR factorization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from .design import ConfigError, interval_indices
from .spline import SplineBasis, basis_matrix

RANK_TOL = 1e-10  # relative to the largest QR pivot


class RankDeficiencyError(ValueError):
    """Design matrix is numerically rank deficient."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"collinear design columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]


@dataclass(frozen=True)
class OlsFit:
    beta: np.ndarray
    cov: np.ndarray
    sigma2_hat: float
    df: int
    columns: tuple[str, ...]

    def coefficient(self, label: str) -> tuple[float, float]:
        """(estimate, standard error) of one coefficient."""
        i = self.columns.index(label)
        return float(self.beta[i]), float(math.sqrt(self.cov[i, i]))


class WaldTest(NamedTuple):
    t: float
    p_one: float
    p_two: float
    reject: bool


# ---------------------------------------------------------------------------
# Student-t distribution via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz).

    Evaluates the even/odd-term recurrence; converges quickly for
    x < (a+1)/(a+b+2), which the caller guarantees.
    """
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-12."""
    if a <= 0 or b <= 0:
        raise ConfigError("incomplete beta requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T_df > t)."""
    if df <= 0:
        raise ConfigError(f"degrees of freedom must be positive, got {df}")
    if t != t:
        raise ConfigError("t statistic is NaN")
    x = df / (df + t * t)
    tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x)
    return tail if t > 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


# ---------------------------------------------------------------------------
# Design assembly and OLS
# ---------------------------------------------------------------------------

def build_design(
    times: np.ndarray,
    arms: np.ndarray,
    y: np.ndarray,
    treatments: Sequence[int],
    adjustment: str = "none",
    starts: Sequence[float] | None = None,
    horizon: float | None = None,
    basis: SplineBasis | None = None,
) -> DesignMatrix:
    """Assemble the fixed-effect design for a given time adjustment.

    Columns: intercept, one indicator per treatment arm in ``treatments``,
    then time columns. Period/calendar adjustments add indicators for
    intervals 2..end (the first interval is the reference level); the
    spline adjustment adds the basis columns with the first one dropped to
    keep the design full rank next to the intercept.
    """
    times = np.asarray(times, dtype=float)
    arms = np.asarray(arms)
    cols = [np.ones(times.size)]
    labels = ["intercept"]
    for k in sorted(treatments):
        cols.append((arms == k).astype(float))
        labels.append(f"trt{k}")
    if adjustment in ("period", "calendar"):
        if starts is None or horizon is None:
            raise ConfigError(f"{adjustment} adjustment needs interval starts and a horizon")
        idx = interval_indices(times, starts, horizon)
        prefix = "per" if adjustment == "period" else "cal"
        for s in range(2, len(starts) + 1):
            cols.append((idx == s).astype(float))
            labels.append(f"{prefix}{s}")
    elif adjustment == "spline":
        if basis is None:
            raise ConfigError("spline adjustment needs a SplineBasis")
        B = basis_matrix(times, basis)
        for i in range(1, B.shape[1]):  # drop first basis column (intercept present)
            cols.append(B[:, i])
            labels.append(f"bs{i + 1}")
    elif adjustment != "none":
        raise ConfigError(f"unknown adjustment {adjustment!r}")
    X = np.column_stack(cols)
    return DesignMatrix(X=X, y=np.asarray(y, dtype=float), columns=tuple(labels))


def ols_fit(dm: DesignMatrix) -> OlsFit:
    """Least squares via column-pivoted QR, with rank-deficiency detection."""
    X, y = dm.X, dm.y
    n, p = X.shape
    if n <= p:
        raise ConfigError(f"need more observations than columns (n={n}, p={p})")
    Q, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or (diag < RANK_TOL * diag[0]).any():
        bad = diag < RANK_TOL * max(diag[0], 1e-300)
        raise RankDeficiencyError([dm.columns[i] for i in piv[bad]])
    beta_piv = solve_triangular(R, Q.T @ y, lower=False)
    beta = np.empty(p)
    beta[piv] = beta_piv
    resid = y - X @ beta
    df = n - p
    sigma2 = float(resid @ resid) / df
    r_inv = solve_triangular(R, np.eye(p), lower=False)
    xtx_inv_piv = r_inv @ r_inv.T
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_piv
    return OlsFit(beta=beta, cov=sigma2 * xtx_inv, sigma2_hat=sigma2, df=df, columns=dm.columns)


def wald_test(
    fit, coeff: str, sided: str = "one_greater", alpha: float = 0.025
) -> WaldTest:
    """t-test of a single coefficient against zero.

    ``one_greater`` tests the one-sided null coeff <= 0; otherwise a
    two-sided test. Works for any fit exposing beta/cov/df/columns.
    """
    if sided not in ("one_greater", "two"):
        raise ConfigError(f"sided must be 'one_greater' or 'two', got {sided!r}")
    if coeff not in fit.columns:
        raise ConfigError(f"coefficient {coeff!r} not in fit columns")
    i = fit.columns.index(coeff)
    se = math.sqrt(float(fit.cov[i, i]))
    if se == 0.0:
        raise ConfigError(f"degenerate fit: zero standard error for {coeff!r}")
    t = float(fit.beta[i]) / se
    p_one = t_sf(t, fit.df)
    p_two = 2.0 * t_sf(abs(t), fit.df)
    reject = (p_one if sided == "one_greater" else p_two) < alpha
    return WaldTest(t=t, p_one=p_one, p_two=p_two, reject=reject)
