"""L1-penalized Gaussian precision estimation (graphical lasso).

Solves ``min_Omega tr(S Omega) - log|Omega| + lam * sum_{j != k} |omega_jk|``
by block coordinate descent over the columns of the working covariance, each
column being a lasso problem solved by cyclic coordinate descent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _cd
from .numerics import NumericalError, check_symmetric

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500


class GlassoConvergenceError(NumericalError):
    def __init__(self, message, max_kkt_violation):
        super().__init__(message)
        self.max_kkt_violation = max_kkt_violation


@dataclass(frozen=True)
class GlassoSolution:
    omega: np.ndarray
    sigma: np.ndarray
    iterations: int
    max_kkt_violation: float


def objective(S, omega, lam) -> float:
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return np.inf
    off = np.abs(omega).sum() - np.abs(np.diag(omega)).sum()
    return float(np.sum(S * omega) - logdet + lam * off)


def kkt_violation(S, omega, sigma, lam) -> float:
    """Largest violation of the stationarity conditions at ``omega``.

    Diagonal entries need ``sigma_jj = s_jj``; off-diagonal zeros need
    ``|sigma_jk - s_jk| <= lam``; nonzeros need ``sigma_jk - s_jk = lam * sign(omega_jk)``.
    """
    diff = sigma - S
    q = S.shape[0]
    off = ~np.eye(q, dtype=bool)
    zero = (omega == 0) & off
    nonzero = (omega != 0) & off
    viol = np.abs(np.diag(diff)).max(initial=0.0)
    if zero.any():
        viol = max(viol, (np.abs(diff[zero]) - lam).max())
    if nonzero.any():
        viol = max(viol, np.abs(diff[nonzero] - lam * np.sign(omega[nonzero])).max())
    return float(max(viol, 0.0))


def _precision_from_columns(W, Beta):
    q = W.shape[0]
    omega = np.empty((q, q))
    for j in range(q):
        rest = np.arange(q) != j
        b = Beta[rest, j]
        omega_jj = 1.0 / (W[j, j] - W[rest, j] @ b)
        omega[j, j] = omega_jj
        omega[rest, j] = -b * omega_jj
    sym = 0.5 * (omega + omega.T)
    sym[(omega == 0) | (omega.T == 0)] = 0.0
    return sym


def _check_input(S, lam):
    S = check_symmetric(S, "S")
    S = 0.5 * (S + S.T)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if np.any(np.diag(S) <= 0):
        raise NumericalError("S must have a positive diagonal")
    return S


def _diagonal_solution(S):
    d = np.diag(S)
    return GlassoSolution(np.diag(1.0 / d), np.diag(d), 0, 0.0)


def glasso_fit(S, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, warm=None) -> GlassoSolution:
    """Fit the graphical lasso.

    Parameters
    ----------
    S : ndarray, shape (q, q)
        Symmetric PSD sample covariance (must be PD when ``lam == 0``).
    lam : float
        Penalty on the off-diagonal entries of the precision matrix.
    tol : float
        Maximum allowed KKT violation at return.
    max_iter : int
        Maximum number of outer sweeps over the columns.
    warm : GlassoSolution, optional
        Previous solution used as the starting point.

    Raises
    ------
    GlassoConvergenceError
        If the KKT residual is still above ``tol`` after ``max_iter`` sweeps.
    """
    S = _check_input(S, lam)
    q = S.shape[0]
    if q == 1:
        return _diagonal_solution(S)
    off = np.abs(S[~np.eye(q, dtype=bool)])
    if lam >= off.max():
        return _diagonal_solution(S)
    if lam == 0:
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError("S is singular and lambda is zero", condition=np.inf) from None
        Linv = np.linalg.inv(L)
        omega = Linv.T @ Linv
        omega = 0.5 * (omega + omega.T)
        return GlassoSolution(omega, S.copy(), 0, kkt_violation(S, omega, S, 0.0))

    # column updates maximize log|W| over the box |w_jk - s_jk| <= lam, so the
    # start must be PD and inside the box
    W = None
    if warm is not None:
        W = warm.sigma.copy()
        W[np.diag_indices(q)] = np.diag(S)
        Beta = -warm.omega / np.diag(warm.omega)[None, :]
        if np.abs(W - S).max() > lam or np.linalg.eigvalsh(W)[0] <= 0:
            W = None
    if W is None:
        c = 1.0 - lam / off.max()
        W = c * S + (1.0 - c) * np.diag(np.diag(S))
        Beta = np.zeros((q, q))
    Beta = np.ascontiguousarray(Beta)
    inner_tol = min(tol, 1e-6) * 1e-4
    viol = np.inf
    for it in range(1, max_iter + 1):
        _cd.glasso_sweep(S, W, Beta, float(lam), inner_tol, 10_000)
        omega = _precision_from_columns(W, Beta)
        try:
            sigma = np.linalg.inv(omega)
        except np.linalg.LinAlgError:
            continue
        viol = kkt_violation(S, omega, sigma, lam)
        if viol <= tol and np.all(np.linalg.eigvalsh(omega) > 0):
            return GlassoSolution(omega, 0.5 * (sigma + sigma.T), it, viol)
    raise GlassoConvergenceError(
        f"graphical lasso did not converge in {max_iter} sweeps (KKT violation {viol:.3g})", viol
    )


def glasso_path(S, lambdas, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> list[GlassoSolution]:
    """Warm-started solutions along a strictly decreasing penalty sequence."""
    lambdas = [float(lam) for lam in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly decreasing")
    out = []
    warm = None
    for lam in lambdas:
        sol = glasso_fit(S, lam, tol=tol, max_iter=max_iter, warm=warm)
        out.append(sol)
        warm = sol
    return out
