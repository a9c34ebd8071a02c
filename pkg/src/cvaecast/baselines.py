"""Linear baselines: per-stock ARMA(1,1) and panel VAR(1)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .errors import DegenerateSeriesError, EstimationError, FeasibilityError, NearUnitRootWarning

COEF_BOUND = 0.99


@dataclass(frozen=True)
class Arma11Params:
    mu: float
    phi: float
    theta: float
    noise_var: float

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError("ARMA(1,1) requires |phi| < 1")


@dataclass
class Var1Params:
    intercept: np.ndarray
    coef: np.ndarray
    resid_cov: np.ndarray


def arma11_residuals(series, mu: float, phi: float, theta: float) -> np.ndarray:
    """CSS residual recursion with the first residual fixed at 0."""
    y = np.asarray(series, dtype=float)
    u = (y[1:] - mu) - phi * (y[:-1] - mu)
    eps = np.empty_like(y)
    eps[0] = 0.0
    eps[1:] = signal.lfilter([1.0], [1.0, theta], u)
    return eps


def fit_arma11(series, max_iter: int = 5000, ridge: float = 1e-2) -> Arma11Params:
    """Conditional-sum-of-squares fit, bounded Nelder-Mead over (mu, phi, theta).

    ``ridge`` adds ``ridge * n * (phi^2 + theta^2)`` to the objective. Near
    white noise the CSS surface is flat along phi = -theta (the AR and MA
    roots cancel); the penalty selects the smallest-norm point on that ridge
    and moves well-identified fits by O(ridge).
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or len(y) < 20:
        raise FeasibilityError("ARMA(1,1) needs a 1-D series of length >= 20")
    if not np.all(np.isfinite(y)):
        raise ValueError("series must be finite")
    scale = y.std()
    if not scale > 0:
        raise DegenerateSeriesError("cannot fit ARMA(1,1) to a constant series")

    center = y.mean()
    z = (y - center) / scale

    penalty = ridge * len(z)

    def sse(params):
        eps = arma11_residuals(z, *params)
        return float(eps[1:] @ eps[1:])

    def css(params):
        return sse(params) + penalty * (params[1] ** 2 + params[2] ** 2)

    r1 = float(np.corrcoef(z[1:], z[:-1])[0, 1])
    start = np.array([0.0, np.clip(r1, -0.9, 0.9), 0.0])
    bounds = [(-10.0, 10.0), (-COEF_BOUND, COEF_BOUND), (-COEF_BOUND, COEF_BOUND)]
    best = None
    # a second start near the MA-dominated corner guards against the ridge phi ~ -theta
    for x0 in (start, np.array([0.0, 0.5 * start[1], 0.5])):
        res = optimize.minimize(
            css, x0, method="Nelder-Mead", bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10},
        )
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        raise EstimationError(f"ARMA(1,1) fit did not converge: {best.message}")
    mu_z, phi, theta = (float(v) for v in best.x)
    if abs(phi) >= COEF_BOUND - 1e-3:
        warnings.warn(f"AR coefficient {phi:.4f} at the stationarity bound", NearUnitRootWarning)
    noise_var = sse(best.x) / (len(y) - 1) * scale**2
    return Arma11Params(center + mu_z * scale, phi, theta, noise_var)


def forecast_arma11(params: Arma11Params, y_t: float, eps_t: float, K: int) -> np.ndarray:
    mu, phi = params.mu, params.phi
    first = mu + phi * (y_t - mu) + params.theta * eps_t
    return mu + phi ** np.arange(K) * (first - mu)


def fit_var1(panel) -> Var1Params:
    """Equation-by-equation OLS of y_t on (1, y_{t-1}); ``panel`` is N x T."""
    Y = np.asarray(panel, dtype=float)
    if Y.ndim != 2:
        raise ValueError("panel must be an N x T matrix")
    N, T = Y.shape
    if T < N + 2:
        raise FeasibilityError(f"VAR(1) on {N} series needs T >= {N + 2}, got {T}")
    X = np.column_stack([np.ones(T - 1), Y[:, :-1].T])
    target = Y[:, 1:].T
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError("VAR(1) regressor matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    dof = max(T - 1 - X.shape[1], 1)
    return Var1Params(beta[0].copy(), beta[1:].T.copy(), resid.T @ resid / dof)


def forecast_var1(params: Var1Params, y_t, K: int) -> np.ndarray:
    out = np.empty((K, len(params.intercept)))
    y = np.asarray(y_t, dtype=float)
    for k in range(K):
        y = params.intercept + params.coef @ y
        out[k] = y
    return out
