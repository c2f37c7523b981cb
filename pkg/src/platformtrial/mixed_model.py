"""Linear mixed models estimated by REML.

Covers random time-interval intercepts (uncorrelated or AR(1)) and random
treatment-by-interval interactions. The restricted likelihood is profiled
down to the variance ratio gamma = sigma2_random / sigma2 (log scale) and,
for AR(1), the correlation rho (atanh scale); the residual variance and
fixed effects then follow in closed form. V^{-1} is applied through the
Woodbury identity, so each objective evaluation costs O(N m^2) with m the
number of random-effect columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .design import ConfigError, interval_indices

_PENALTY = 1e12
_LOG_GAMMA_BOUND = 34.0
_ATANH_RHO_BOUND = 18.0


class DegenerateRandomDesign(ConfigError):
    """No usable random-effect columns; the model reduces to plain OLS."""


@dataclass(frozen=True)
class MixedFit:
    beta: np.ndarray
    cov: np.ndarray
    columns: tuple[str, ...]
    df: int
    sigma2: float
    sigma2_random: float
    rho: float | None
    reml_loglik: float
    converged: bool
    iterations: int


def ar1_correlation(m: int, rho: float) -> np.ndarray:
    """AR(1) correlation matrix: entry (a, b) = rho^|a-b|."""
    if not -1.0 < rho < 1.0:
        raise ConfigError(f"AR(1) correlation must satisfy |rho| < 1, got {rho}")
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def build_random_design(
    times: np.ndarray,
    arms: np.ndarray,
    grouping: str,
    starts: Sequence[float],
    horizon: float,
    prefix: str = "iv",
    treatments: Sequence[int] | None = None,
    exclude_arm: int | None = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Random-effect design matrix Z.

    ``interval`` grouping yields one indicator column per time interval
    2..end. ``interaction`` grouping yields one column per (treatment arm,
    interval >= 2) pair, with the evaluated arm excluded; columns that are
    identically zero (arm not present in the interval) are removed.
    """
    times = np.asarray(times, dtype=float)
    arms = np.asarray(arms)
    idx = interval_indices(times, starts, horizon)
    cols: list[np.ndarray] = []
    labels: list[str] = []
    if grouping == "interval":
        for s in range(2, len(starts) + 1):
            col = (idx == s).astype(float)
            if col.any():
                cols.append(col)
                labels.append(f"{prefix}{s}")
    elif grouping == "interaction":
        if treatments is None:
            raise ConfigError("interaction grouping needs the treatment-arm set")
        for k in sorted(treatments):
            if k == exclude_arm:
                continue
            in_arm = arms == k
            for s in range(2, len(starts) + 1):
                col = (in_arm & (idx == s)).astype(float)
                if col.any():
                    cols.append(col)
                    labels.append(f"trt{k}:{prefix}{s}")
    else:
        raise ConfigError(f"unknown random grouping {grouping!r}")
    if not cols:
        raise DegenerateRandomDesign(
            "no random-effect columns (single time interval); fit the fixed model instead"
        )
    return np.column_stack(cols), tuple(labels)


class _RemlWorkspace:
    """Cross-products shared by all objective evaluations of one fit."""

    def __init__(self, X: np.ndarray, Z: np.ndarray, y: np.ndarray):
        self.n, self.p = X.shape
        self.m = Z.shape[1]
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.ZtZ = Z.T @ Z
        self.ZtX = Z.T @ X
        self.Zty = Z.T @ y
        eig = np.linalg.eigvalsh(self.XtX)
        if eig[0] <= 1e-10 * max(eig[-1], 1e-300):
            raise ConfigError("fixed-effect design is rank deficient")

    def pieces(self, gamma: float, rho: float, structure: str):
        """(XtWiX, XtWiy, ytWiy, logdet W) for W = I + gamma Z R Z'."""
        if structure == "ar1":
            L = np.linalg.cholesky(ar1_correlation(self.m, rho))
            S = gamma * (L.T @ self.ZtZ @ L)
            ZtX_r = L.T @ self.ZtX
            Zty_r = L.T @ self.Zty
        else:
            L = None
            S = gamma * self.ZtZ
            ZtX_r = self.ZtX
            Zty_r = self.Zty
        G = np.eye(self.m) + S
        cG = np.linalg.cholesky(G)
        logdet_w = 2.0 * float(np.log(np.diag(cG)).sum())
        # W^{-1} correction: A' W^{-1} B = A'B - gamma (Z'A)' L G^{-1} L' (Z'B)
        sol_x = np.linalg.solve(G, ZtX_r)
        sol_y = np.linalg.solve(G, Zty_r)
        XtWiX = self.XtX - gamma * (ZtX_r.T @ sol_x)
        XtWiy = self.Xty - gamma * (ZtX_r.T @ sol_y)
        ytWiy = self.yty - gamma * float(Zty_r @ sol_y)
        return XtWiX, XtWiy, ytWiy, logdet_w

    def neg2ll(self, gamma: float, rho: float, structure: str) -> float:
        """Profiled -2 restricted log-likelihood, up to the (n-p)log(2pi) constant."""
        try:
            XtWiX, XtWiy, ytWiy, logdet_w = self.pieces(gamma, rho, structure)
            sign, logdet_x = np.linalg.slogdet(XtWiX)
            if sign <= 0:
                return _PENALTY
            beta = np.linalg.solve(XtWiX, XtWiy)
        except np.linalg.LinAlgError:
            return _PENALTY
        rss = ytWiy - float(beta @ XtWiy)
        df = self.n - self.p
        sigma2 = max(rss / df, 1e-300)
        return df * math.log(sigma2) + logdet_w + logdet_x + df


def reml_neg2loglik(
    X: np.ndarray,
    Z: np.ndarray,
    y: np.ndarray,
    gamma: float,
    rho: float = 0.0,
    cov_structure: str = "independent",
) -> float:
    """Profiled REML objective at a given (gamma, rho); used for diagnostics."""
    return _RemlWorkspace(np.asarray(X, float), np.asarray(Z, float), np.asarray(y, float)).neg2ll(
        gamma, rho, cov_structure
    )


def reml_fit(
    X: np.ndarray,
    Z: np.ndarray,
    y: np.ndarray,
    cov_structure: str = "independent",
    columns: Sequence[str] | None = None,
    max_evals: int = 500,
    tol: float = 1e-8,
) -> MixedFit:
    """Fit the mixed model by REML over the transformed variance parameters.

    Nelder-Mead on (log gamma) or (log gamma, atanh rho); a boundary
    solution gamma -> 0 is legitimate and reported, not an error. A fit
    exhausting the evaluation budget is returned with converged=False.
    """
    if cov_structure not in ("independent", "ar1"):
        raise ConfigError(f"unknown covariance structure {cov_structure!r}")
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] <= X.shape[1]:
        raise ConfigError("need more observations than fixed-effect columns")
    work = _RemlWorkspace(X, Z, y)

    def unpack(x):
        gamma = math.exp(float(np.clip(x[0], -_LOG_GAMMA_BOUND, _LOG_GAMMA_BOUND)))
        rho = 0.0
        if cov_structure == "ar1":
            rho = math.tanh(float(np.clip(x[1], -_ATANH_RHO_BOUND, _ATANH_RHO_BOUND)))
        return gamma, rho

    def objective(x):
        gamma, rho = unpack(x)
        return work.neg2ll(gamma, rho, cov_structure)

    # coarse scan picks the Nelder-Mead start; the surface can be flat in gamma
    scan_logg = (-10.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0)
    scan_rho = (-0.5, 0.0, 0.5) if cov_structure == "ar1" else (0.0,)
    best_x, best_f = None, math.inf
    n_scan = 0
    for lg in scan_logg:
        for r in scan_rho:
            x = [lg] if cov_structure == "independent" else [lg, math.atanh(r)]
            f = objective(x)
            n_scan += 1
            if f < best_f:
                best_x, best_f = x, f
    res = minimize(
        objective,
        np.asarray(best_x, dtype=float),
        method="Nelder-Mead",
        options={
            "fatol": tol,
            "xatol": 1e-7,
            "maxfev": max(max_evals - n_scan, 10),
            "maxiter": max(max_evals - n_scan, 10),
        },
    )
    x_hat = res.x if res.fun <= best_f else np.asarray(best_x)
    converged = bool(res.success) or res.fun <= best_f + tol
    gamma, rho = unpack(np.atleast_1d(x_hat))

    XtWiX, XtWiy, ytWiy, logdet_w = work.pieces(gamma, rho, cov_structure)
    beta = np.linalg.solve(XtWiX, XtWiy)
    df = work.n - work.p
    sigma2 = max((ytWiy - float(beta @ XtWiy)) / df, 1e-300)
    cov = sigma2 * np.linalg.inv(XtWiX)
    sign, logdet_x = np.linalg.slogdet(XtWiX)
    neg2 = df * math.log(sigma2) + logdet_w + logdet_x + df
    return MixedFit(
        beta=beta,
        cov=cov,
        columns=tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(work.p)),
        df=df,
        sigma2=sigma2,
        sigma2_random=gamma * sigma2,
        rho=rho if cov_structure == "ar1" else None,
        reml_loglik=-0.5 * (neg2 + df * math.log(2.0 * math.pi)),
        converged=converged,
        iterations=int(res.nfev) + n_scan,
    )


def mixed_wald_test(fit: MixedFit, coeff: str, sided: str = "one_greater", alpha: float = 0.025):
    """Wald t-test on a fixed effect, with residual degrees of freedom n - p."""
    from .regression_engine import wald_test

    return wald_test(fit, coeff, sided=sided, alpha=alpha)
