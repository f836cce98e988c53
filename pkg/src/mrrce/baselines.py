"""Competitor estimators: OLS, ridge, lasso, group lasso and MRCE.

Penalized solvers work on the raw sums-of-squares scale (``0.5 * |y - Z b|^2 +
lam * |b|_1``). Cross-validation grids are expressed per observation: a grid
value ``a`` is applied as ``lam = n_train * a`` on each training fold, so the
selected value transfers to the full-data refit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .evaluation import iter_folds, kfold_split
from .glasso import GlassoSolution, glasso_fit
from .model import Dataset
from .numerics import NumericalError, make_rng, sym_eigen

log = logging.getLogger(__name__)

CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000
N_LAMBDAS = 20
LAMBDA_RATIO = 1e-3
# coordinate descent runs in chunks of this many sweeps, each followed by exact
# steps on the current support (ill-conditioned designs stall plain CD)
POLISH_EVERY = 20


class ConvergenceError(NumericalError):
    pass


@dataclass(frozen=True)
class CoefEstimate:
    B_hat: np.ndarray
    method: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.B_hat)):
            raise NumericalError(f"{self.method} produced non-finite coefficients")


@dataclass(frozen=True)
class MrceProblem:
    data: Dataset
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("MRCE penalties must be nonnegative")


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(0 if seed_or_rng is None else seed_or_rng)


def log_grid(lam_max: float, n: int = N_LAMBDAS, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    """Decreasing log-spaced grid from ``lam_max`` to ``ratio * lam_max``."""
    if not lam_max > 0:
        lam_max = 1.0
    return np.geomspace(lam_max, ratio * lam_max, n)


def _grid(lambdas, default):
    if lambdas is None:
        return default
    lambdas = np.sort(np.asarray(lambdas, dtype=float).ravel())[::-1]
    if lambdas.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(lambdas < 0):
        raise ValueError("lambdas must be nonnegative")
    return lambdas


def _argmin_larger(scores, lambdas):
    """Index of the smallest score; ties go to the larger lambda."""
    scores = np.asarray(scores, dtype=float)
    best = np.nanmin(scores)
    tied = np.flatnonzero(scores == best)
    return int(tied[np.argmax(np.asarray(lambdas)[tied])])


# --------------------------------------------------------------------- OLS


def ols_fit(data: Dataset) -> CoefEstimate:
    Z, Y = data.Z, data.Y
    if np.linalg.matrix_rank(Z) < data.p:
        raise NumericalError("Z is rank deficient; least squares is not unique", condition=np.inf)
    B, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    return CoefEstimate(B, "ols")


# ------------------------------------------------------------------- ridge


def ridge_lambda_max(data: Dataset) -> float:
    """Ten times the mean eigenvalue of ``Z'Z`` (ridge has no null threshold)."""
    return 10.0 * float(np.sum(data.Z**2)) / data.p


def ridge_loo_errors(data: Dataset, lambdas) -> np.ndarray:
    """Closed-form leave-one-out squared errors, shape ``(len(lambdas), q)``.

    With ``Z = U diag(d) V'`` the ridge hat matrix is ``U diag(d^2/(d^2+lam)) U'``
    and the LOO residual is ``e_i / (1 - h_ii)``.
    """
    U, d, _ = np.linalg.svd(data.Z, full_matrices=False)
    UtY = U.T @ data.Y
    out = np.empty((len(lambdas), data.q))
    for i, lam in enumerate(lambdas):
        shrink = d**2 / (d**2 + lam)
        fitted = U @ (shrink[:, None] * UtY)
        h = np.einsum("ik,k,ik->i", U, shrink, U)
        resid = (data.Y - fitted) / (1.0 - h)[:, None]
        out[i] = np.sum(resid**2, axis=0)
    return out


def ridge_solve(data: Dataset, lam) -> np.ndarray:
    """``(Z'Z + lam I)^{-1} Z'Y``; ``lam`` may be a scalar or one value per response."""
    eig = sym_eigen(data.Z.T @ data.Z)
    RtZY = eig.vectors.T @ (data.Z.T @ data.Y)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (data.q,))
    denom = eig.values[:, None] + lam[None, :]
    if np.any(denom <= 0):
        raise NumericalError("ridge system is singular", condition=np.inf)
    return eig.vectors @ (RtZY / denom)


def ridge_fit_shared(data: Dataset, lambdas=None) -> CoefEstimate:
    lambdas = _grid(lambdas, log_grid(ridge_lambda_max(data)))
    loo = ridge_loo_errors(data, lambdas).sum(axis=1)
    lam = float(lambdas[_argmin_larger(loo, lambdas)])
    return CoefEstimate(ridge_solve(data, lam), "ridge", {"lambda": lam})


def ridge_fit_separate(data: Dataset, lambdas=None) -> CoefEstimate:
    lambdas = _grid(lambdas, log_grid(ridge_lambda_max(data)))
    loo = ridge_loo_errors(data, lambdas)
    lam = np.array([lambdas[_argmin_larger(loo[:, j], lambdas)] for j in range(data.q)])
    return CoefEstimate(ridge_solve(data, lam), "sep_ridge", {"lambda": lam.tolist()})


# ------------------------------------------------------------------- lasso


def lasso_solve(G, c, lam, beta=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Minimize ``0.5 b'Gb - c'b + lam |b|_1`` (``G = Z'Z``, ``c = Z'y``)."""
    beta = np.zeros(G.shape[0]) if beta is None else np.array(beta, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    live = np.diag(G) > 0
    done = 0
    while True:
        sweeps, viol = _cd.lasso_gram(G, c, beta, float(lam), tol, min(POLISH_EVERY, max_sweeps - done))
        done += sweeps
        if viol <= tol:
            return beta
        _feature_sign(G, c, beta, lam, live)
        viol = _lasso_violation(c - G @ beta, beta, lam, live)
        if viol <= tol:
            return beta
        if done >= max_sweeps:
            raise ConvergenceError(f"lasso did not converge (KKT violation {viol:.3g})")


def _lasso_violation(grad, beta, lam, live) -> float:
    zero = (beta == 0) & live
    nz = (beta != 0) & live
    v = np.concatenate([np.abs(grad[zero]) - lam, np.abs(grad[nz] - lam * np.sign(beta[nz]))])
    return float(max(v.max(initial=0.0), 0.0))


def _feature_sign(K, h, beta, lam, live, max_steps=20):
    """Exact steps for ``0.5 b'Kb - h'b + lam |b|_1`` on the current support, in place.

    Each step solves the stationarity equations with the signs of ``beta``
    held fixed, then moves along the segment towards that solution to the
    best of its zero crossings and the endpoint (coordinates that reach zero
    leave the support). Only objective-decreasing moves are taken. Coordinate
    descent is left to add coordinates to the support.
    """

    def f(b):
        return 0.5 * b @ (K @ b) - h @ b + lam * np.abs(b).sum()

    fb = f(beta)
    for _ in range(max_steps):
        A = np.flatnonzero((beta != 0) & live)
        if A.size == 0:
            return
        s = np.sign(beta[A])
        try:
            x = np.linalg.solve(K[np.ix_(A, A)], h[A] - lam * s)
        except np.linalg.LinAlgError:
            return
        if not np.all(np.isfinite(x)):
            return
        d = x - beta[A]
        cross = np.sign(x) != s
        tk = np.full(A.size, np.inf)
        tk[cross] = -beta[A][cross] / d[cross]
        best, best_f = None, fb
        for t in np.unique(np.append(tk[tk < 1.0], 1.0)):
            cand = beta.copy()
            cand[A] = beta[A] + t * d
            cand[A[tk <= t]] = 0.0
            fc = f(cand)
            if fc < best_f:
                best, best_f = cand, fc
        if best is None or fb - best_f <= 1e-15 * max(abs(fb), 1.0):
            if best is not None:
                beta[:] = best
            return
        beta[:] = best
        fb = best_f


def lasso_kkt(Z, y, beta, lam) -> float:
    g = Z.T @ (y - Z @ beta)
    zero = beta == 0
    v = np.concatenate([np.abs(g[zero]) - lam, np.abs(g[~zero] - lam * np.sign(beta[~zero]))])
    return float(max(v.max(initial=0.0), 0.0))


def group_lasso_solve(G, C, lam, B=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Minimize ``0.5 tr(B'GB) - tr(C'B) + lam sum_i |B_i|_2`` over rows ``B_i``."""
    B = np.zeros(C.shape) if B is None else np.array(B, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    done = 0
    while True:
        sweeps, viol = _cd.group_lasso_gram(G, C, B, float(lam), tol, min(POLISH_EVERY, max_sweeps - done))
        done += sweeps
        if viol <= tol:
            return B
        _group_newton(G, C, B, lam)
        viol = _cd._group_kkt(G, C - G @ B, B, float(lam))
        if viol <= tol:
            return B
        if done >= max_sweeps:
            raise ConvergenceError(f"group lasso did not converge (KKT violation {viol:.3g})")


def _group_newton(G, C, B, lam, max_steps=20):
    """Damped Newton steps on the nonzero rows of ``B``, in place.

    The objective is smooth while rows stay nonzero. Rows whose path along
    the Newton step passes near zero give breakpoints at which they are set
    to zero (the analogue of a sign change); the best breakpoint, the full
    step and a backtracked step are compared and only a decrease is taken.
    Coordinate descent adds rows.
    """
    q = B.shape[1]
    live = np.diag(G) > 0

    def f(M):
        return 0.5 * np.sum(M * (G @ M)) - np.sum(C * M) + lam * np.linalg.norm(M, axis=1).sum()

    fx = f(B)
    for _ in range(max_steps):
        norms = np.linalg.norm(B, axis=1)
        A = np.flatnonzero((norms > 0) & live)
        if A.size == 0:
            return
        X, nA = B[A], norms[A]
        grad = (G @ B - C)[A] + lam * X / nA[:, None]
        H = np.kron(G[np.ix_(A, A)], np.eye(q))
        for i, (x, nx) in enumerate(zip(X, nA)):
            H[i * q:(i + 1) * q, i * q:(i + 1) * q] += lam * (np.eye(q) / nx - np.outer(x, x) / nx**3)
        try:
            step = np.linalg.solve(H, grad.ravel()).reshape(X.shape)
        except np.linalg.LinAlgError:
            return
        best, best_f = None, fx
        # rows whose path X - t*step passes close to zero: candidate exits from the support
        ss = np.sum(step * step, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tk = np.where(ss > 0, np.sum(X * step, axis=1) / ss, np.inf)
        near = np.linalg.norm(X - np.clip(tk, 0, 1)[:, None] * step, axis=1) < 0.5 * nA
        exits = near & (tk > 0) & (tk < 1)
        for t in np.unique(np.append(tk[exits], 1.0)):
            cand = B.copy()
            cand[A] = X - t * step
            cand[A[exits & (tk <= t)]] = 0.0
            cand[A[(t == 1.0) & (np.sum(X * (X - step), axis=1) <= 0)]] = 0.0
            fc = f(cand)
            if fc < best_f:
                best, best_f = cand, fc
        t = 1.0
        while t > 1e-8:
            Xc = X - t * step
            if np.all(np.linalg.norm(Xc, axis=1) > 0):
                cand = B.copy()
                cand[A] = Xc
                fc = f(cand)
                if fc < fx:
                    if fc < best_f:
                        best, best_f = cand, fc
                    break
            t *= 0.5
        if best is None:
            return
        done = fx - best_f <= 1e-15 * max(abs(fx), 1.0)
        B[:] = best
        fx = best_f
        if done:
            return


def group_lasso_kkt(Z, Y, B, lam) -> float:
    g = Z.T @ (Y - Z @ B)
    viol = 0.0
    for i in range(B.shape[0]):
        bn = np.linalg.norm(B[i])
        if bn == 0:
            v = np.linalg.norm(g[i]) - lam
        else:
            v = np.linalg.norm(g[i] - lam * B[i] / bn)
        viol = max(viol, v)
    return float(viol)


def _cv_path(data, labels, grid, path_fn):
    """Validation squared error per grid point and response, summed over folds.

    ``path_fn(train, grid_scaled)`` returns coefficient matrices for each grid
    point; returns the fold-mean MSE array of shape ``(len(grid), q)``.
    """
    folds = list(iter_folds(labels))
    mse = np.zeros((len(grid), data.q))
    for train_idx, test_idx in folds:
        train = data.subset(train_idx)
        Z_val = data.Z[test_idx] + data.z_mean
        Y_val = data.Y[test_idx] + data.y_mean
        coefs = path_fn(train, train.n * np.asarray(grid))
        for g, B in enumerate(coefs):
            pred = train.predict(B, Z_val)
            mse[g] += np.mean((Y_val - pred) ** 2, axis=0)
    return mse / len(folds)


def _lasso_path(train: Dataset, lams, j: int):
    G = train.Z.T @ train.Z
    c = train.Z.T @ train.Y[:, j]
    beta = np.zeros(train.p)
    out = []
    for lam in lams:
        beta = lasso_solve(G, c, lam, beta)
        out.append(beta.copy())
    return out


def lasso_fit_separate(data: Dataset, folds: int = 3, lambdas=None, rng=None) -> CoefEstimate:
    """Per-response lasso with ``folds``-fold CV on validation MSE.

    ``lambdas`` are per-observation values (default: 20 log-spaced points from
    ``|Z'y_j|_inf / n`` down by a factor 1e3, one grid per response).
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    labels = kfold_split(data.n, folds, _rng(rng))
    G = data.Z.T @ data.Z
    B = np.zeros((data.p, data.q))
    chosen = []
    for j in range(data.q):
        default = log_grid(np.abs(data.Z.T @ data.Y[:, j]).max() / data.n)
        grid = _grid(lambdas, default)

        def path(train, lams, j=j):
            coefs = _lasso_path(train, lams, j)
            return [np.outer(b, np.eye(data.q)[j]) for b in coefs]

        mse = _cv_path(data, labels, grid, path)[:, j]
        a = float(grid[_argmin_larger(mse, grid)])
        B[:, j] = lasso_solve(G, data.Z.T @ data.Y[:, j], data.n * a)
        chosen.append(a)
    return CoefEstimate(B, "sep_lasso", {"lambda": chosen})


def group_lasso_fit(data: Dataset, folds: int = 3, lambdas=None, rng=None) -> CoefEstimate:
    """Row-wise group lasso with ``folds``-fold CV on pooled validation MSE."""
    if folds < 2:
        raise ValueError("folds must be at least 2")
    labels = kfold_split(data.n, folds, _rng(rng))
    ZY = data.Z.T @ data.Y
    grid = _grid(lambdas, log_grid(np.linalg.norm(ZY, axis=1).max() / data.n))

    def path(train, lams):
        G = train.Z.T @ train.Z
        C = train.Z.T @ train.Y
        B = np.zeros((train.p, train.q))
        out = []
        for lam in lams:
            B = group_lasso_solve(G, C, lam, B)
            out.append(B.copy())
        return out

    mse = _cv_path(data, labels, grid, path).mean(axis=1)
    a = float(grid[_argmin_larger(mse, grid)])
    B = group_lasso_solve(data.Z.T @ data.Z, ZY, data.n * a)
    return CoefEstimate(B, "group_lasso", {"lambda": a})


# -------------------------------------------------------------------- MRCE


@dataclass(frozen=True)
class MrceFit:
    B: np.ndarray
    omega: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool


def mrce_objective(data: Dataset, B, omega, lambda1, lambda2) -> float:
    """``tr[(1/n)(Y-ZB)'(Y-ZB) Omega] - log|Omega| + l1 |B|_1 + l2 sum_{j!=k} |omega_jk|``."""
    R = data.Y - data.Z @ B
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return np.inf
    off = np.abs(omega).sum() - np.abs(np.diag(omega)).sum()
    return float(np.sum((R.T @ R / data.n) * omega) - logdet + lambda1 * np.abs(B).sum() + lambda2 * off)


def mrce_b_step(data: Dataset, omega, lambda1, B=None, G=None, tol=CD_TOL):
    """Minimize the MRCE objective over ``B`` with ``omega`` fixed.

    Multiplying by ``n/2`` gives ``0.5 tr(B'GB omega) - tr(B'Z'Y omega) +
    (n lambda1 / 2) |B|_1``, solved by coordinate descent with exact
    support steps on ``vec(B)`` (row-major, Hessian ``kron(G, omega)``).
    """
    G = data.Z.T @ data.Z if G is None else G
    H = np.ascontiguousarray(data.Z.T @ data.Y @ omega)
    B = np.zeros((data.p, data.q)) if B is None else np.array(B, dtype=float)
    om = np.ascontiguousarray(omega, dtype=float)
    lam = 0.5 * data.n * lambda1
    live = np.repeat(np.diag(G) > 0, data.q)
    K = None
    done = 0
    while True:
        sweeps, viol = _cd.weighted_lasso_gram(G, H, om, B, lam, tol, min(POLISH_EVERY, CD_MAX_SWEEPS - done))
        done += sweeps
        if viol <= tol:
            return B
        K = np.kron(G, om) if K is None else K
        b = B.ravel()
        _feature_sign(K, H.ravel(), b, lam, live)
        B = b.reshape(B.shape)
        viol = _cd._weighted_kkt(G, H, G @ B @ om, B, float(lam))
        if viol <= tol:
            return B
        if done >= CD_MAX_SWEEPS:
            raise ConvergenceError(f"MRCE B-step did not converge (KKT violation {viol:.3g})")


def mrce_solve(data: Dataset, lambda1, lambda2, tol=1e-6, max_iter=50, B0=None, omega0=None) -> MrceFit:
    """Alternate the ``B`` and ``Omega`` updates until the relative objective change is below ``tol``."""
    G = data.Z.T @ data.Z
    B = np.zeros((data.p, data.q)) if B0 is None else np.array(B0, dtype=float)
    omega = np.eye(data.q) if omega0 is None else np.array(omega0, dtype=float)
    warm = None
    trace = [mrce_objective(data, B, omega, lambda1, lambda2)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        B = mrce_b_step(data, omega, lambda1, B, G)
        R = data.Y - data.Z @ B
        sol = glasso_fit(R.T @ R / data.n, lambda2, warm=warm)
        warm = sol
        omega = sol.omega
        trace.append(mrce_objective(data, B, omega, lambda1, lambda2))
        prev = trace[-2]
        if np.isfinite(prev) and abs(prev - trace[-1]) <= tol * max(abs(prev), 1e-12):
            converged = True
            break
    # a last B-step makes the returned B stationary for the returned Omega
    B = mrce_b_step(data, omega, lambda1, B, G)
    trace.append(mrce_objective(data, B, omega, lambda1, lambda2))
    return MrceFit(B, omega, trace, it, converged)


def mrce_fit(problem: MrceProblem, tol=1e-6, max_iter=50):
    """Fit MRCE at fixed penalties; returns ``(CoefEstimate, omega_hat)``."""
    res = mrce_solve(problem.data, problem.lambda1, problem.lambda2, tol, max_iter)
    est = CoefEstimate(
        res.B,
        "mrce",
        {"lambda1": problem.lambda1, "lambda2": problem.lambda2, "iterations": res.iterations, "converged": res.converged},
    )
    return est, res.omega


def mrce_grids(data: Dataset, n1: int = N_LAMBDAS, n2: int = N_LAMBDAS, ratio: float = LAMBDA_RATIO):
    """Default decreasing grids: ``B = 0`` threshold with ``Omega = I`` and the largest off-diagonal of ``Y'Y/n``."""
    l1 = 2.0 * np.abs(data.Z.T @ data.Y).max() / data.n
    S = data.Y.T @ data.Y / data.n
    off = np.abs(S[~np.eye(data.q, dtype=bool)])
    l2 = off.max() if off.size else 1.0
    return log_grid(l1, n1, ratio), log_grid(l2, n2, ratio)


def mrce_cv(data: Dataset, folds: int = 5, lambda1_grid=None, lambda2_grid=None, rng=None, tol=1e-6, max_iter=50):
    """Select ``(lambda1, lambda2)`` by ``folds``-fold CV on pooled validation MSE and refit.

    Within a fold each ``lambda2`` column is traversed in decreasing
    ``lambda1`` order with warm starts. Cells whose solver fails score
    ``inf``. Ties go to the larger ``lambda2`` and then the larger ``lambda1``.
    Returns ``(CoefEstimate, omega_hat, cv_table)`` with ``cv_table`` of shape
    ``(len(lambda1_grid), len(lambda2_grid))``.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    d1, d2 = mrce_grids(data)
    g1 = _grid(lambda1_grid, d1)
    g2 = _grid(lambda2_grid, d2)
    labels = kfold_split(data.n, folds, _rng(rng))
    table = np.zeros((len(g1), len(g2)))
    for train_idx, test_idx in iter_folds(labels):
        train = data.subset(train_idx)
        Z_val = data.Z[test_idx] + data.z_mean
        Y_val = data.Y[test_idx] + data.y_mean
        for b, l2 in enumerate(g2):
            B0, om0 = None, None
            for a, l1 in enumerate(g1):
                try:
                    res = mrce_solve(train, l1, l2, tol, max_iter, B0, om0)
                except NumericalError as exc:
                    log.debug("MRCE cell (%g, %g) failed: %s", l1, l2, exc)
                    table[a, b] = np.inf
                    continue
                B0, om0 = res.B, res.omega
                table[a, b] += np.mean((Y_val - train.predict(res.B, Z_val)) ** 2)
    table /= folds
    best = np.nanmin(table)
    if not np.isfinite(best):
        raise ConvergenceError("every MRCE cross-validation cell failed")
    cells = [(a, b) for a in range(len(g1)) for b in range(len(g2)) if table[a, b] == best]
    a, b = max(cells, key=lambda ab: (g2[ab[1]], g1[ab[0]]))
    est, omega = mrce_fit(MrceProblem(data, float(g1[a]), float(g2[b])), tol, max_iter)
    return est, omega, table
