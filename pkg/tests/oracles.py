"""Independent oracle implementations used only by the tests.

Each oracle deliberately takes a different algorithmic route than the
package code it checks: naive recursion instead of the iterated basis
build, numerical quadrature instead of the incomplete-beta evaluation,
explicit normal equations instead of QR, dense matrix algebra instead of
the Woodbury path.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def naive_bspline(x: float, k: int, i: int, t: np.ndarray) -> float:
    """Textbook recursive B-spline evaluation on knot vector t."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    c1 = 0.0
    if t[i + k] != t[i]:
        c1 = (x - t[i]) / (t[i + k] - t[i]) * naive_bspline(x, k - 1, i, t)
    c2 = 0.0
    if t[i + k + 1] != t[i + 1]:
        c2 = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * naive_bspline(x, k - 1, i + 1, t)
    return c1 + c2


def naive_basis_row(x: float, degree: int, knots: np.ndarray) -> np.ndarray:
    n_fun = len(knots) - degree - 1
    return np.array([naive_bspline(x, degree, i, knots) for i in range(n_fun)])


def t_pdf(x: float, df: float) -> float:
    ln = (
        math.lgamma((df + 1.0) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
        - (df + 1.0) / 2.0 * math.log1p(x * x / df)
    )
    return math.exp(ln)


def t_sf_quad(t: float, df: float) -> float:
    """Upper tail of the Student-t by adaptive quadrature from 0 to |t|."""
    body, _ = quad(t_pdf, 0.0, abs(t), args=(df,), epsabs=1e-13, epsrel=1e-13)
    return 0.5 - body if t >= 0 else 0.5 + body


def normal_equations_ols(X: np.ndarray, y: np.ndarray):
    """(beta, cov, sigma2, df) via explicit normal equations."""
    xtx = X.T @ X
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    df = X.shape[0] - X.shape[1]
    sigma2 = float(resid @ resid) / df
    return beta, sigma2 * np.linalg.inv(xtx), sigma2, df


def dense_reml_neg2ll(X, Z, y, gamma, rho=0.0) -> float:
    """Profiled REML objective via dense V, no Woodbury shortcuts."""
    n, p = X.shape
    m = Z.shape[1]
    idx = np.arange(m)
    R = rho ** np.abs(idx[:, None] - idx[None, :]) if rho != 0.0 else np.eye(m)
    W = np.eye(n) + gamma * Z @ R @ Z.T
    Wi = np.linalg.inv(W)
    XtWiX = X.T @ Wi @ X
    beta = np.linalg.solve(XtWiX, X.T @ Wi @ y)
    r = y - X @ beta
    s2 = float(r @ Wi @ r) / (n - p)
    return (
        (n - p) * math.log(s2)
        + np.linalg.slogdet(W)[1]
        + np.linalg.slogdet(XtWiX)[1]
        + (n - p)
    )
