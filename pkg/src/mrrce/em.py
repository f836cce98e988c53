"""EM estimation of the multivariate random-effect regression model.

Model, after rotating responses by the equicorrelation eigenbasis::

    Y = Z Gamma + E,   E ~ MVN(0, I_n, Omega^{-1}),   Gamma ~ MVN(0, I_p, sigma2 * D_rho)

Each iteration computes the conditional second moments of the residual and of
``Gamma`` given ``Y`` (E-step), then updates ``Omega`` with the graphical lasso
and ``(sigma2, rho)`` in closed form (M-step). The fit ends with the E-BLUP of
``Gamma`` mapped back to the original response basis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .evaluation import iter_folds, kfold_split
from .glasso import DEFAULT_TOL as GLASSO_TOL
from .glasso import glasso_fit
from .model import (
    RHO_MAX,
    Dataset,
    ParameterSet,
    TransformedProblem,
    back_transform_gamma,
    back_transform_precision,
    equicorr_eigenvalues,
    to_transformed,
)
from .numerics import NumericalError, kron, make_rng, spd_solve, sym_eigen, unvec, vec

log = logging.getLogger(__name__)

STOPPING_RULES = ("loglik-relative", "parameter-change")


@dataclass(frozen=True)
class EStepMoments:
    Q1: np.ndarray
    Q2: np.ndarray
    gamma_mean: np.ndarray


@dataclass(frozen=True)
class FitConfig:
    lambda_omega: float = 0.0
    tol: float = 1e-4
    max_iter: int = 200
    stopping_rule: str = "loglik-relative"
    glasso_tol: float = GLASSO_TOL

    def __post_init__(self):
        if self.lambda_omega < 0:
            raise ValueError("lambda_omega must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.stopping_rule not in STOPPING_RULES:
            raise ValueError(f"stopping_rule must be one of {STOPPING_RULES}")


@dataclass(frozen=True)
class FitResult:
    """Output of :func:`fit`.

    ``theta`` carries the precision matrix in the original response basis;
    ``omega_transformed`` is the same estimate in the rotated basis where the
    penalty acts.
    """

    gamma_star: np.ndarray
    theta: ParameterSet
    omega_transformed: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    lambda_omega: float = 0.0
    gamma_transformed: np.ndarray = field(default=None, repr=False)

    def predict(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.gamma_star


class _Stats:
    """Sufficient statistics of a transformed problem.

    Only ``Z'Z``, ``Z'Y`` and ``Y'Y`` enter the EM; the eigenbasis ``R`` of
    ``Z'Z`` decouples the posterior of ``Gamma`` into ``p`` independent
    ``q x q`` blocks.
    """

    def __init__(self, tp: TransformedProblem):
        self.n, self.p, self.q = tp.n, tp.p, tp.q
        Z, Y = tp.Z_t, tp.Y_t
        eig = sym_eigen(Z.T @ Z)
        self.R = eig.vectors
        self.s = eig.values
        self.C = self.R.T @ (Z.T @ Y)
        self.YY = Y.T @ Y


def _posterior(stats: _Stats, theta: ParameterSet):
    omega = theta.omega
    v = theta.prior_variances()
    P = stats.s[:, None, None] * omega[None] + np.diag(1.0 / v)[None]
    Pinv = np.linalg.inv(P)
    Pinv = 0.5 * (Pinv + np.swapaxes(Pinv, 1, 2))
    b = stats.C @ omega
    H = np.einsum("kij,kj->ki", Pinv, b)
    return P, Pinv, b, H


def _moments(stats: _Stats, theta: ParameterSet) -> EStepMoments:
    _, Pinv, _, H = _posterior(stats, theta)
    cov_sum = Pinv.sum(axis=0)
    Q2 = H.T @ H + cov_sum
    ZZ_term = (H.T * stats.s) @ H + np.einsum("k,kij->ij", stats.s, Pinv)
    cross = stats.C.T @ H
    Q1 = stats.YY - cross - cross.T + ZZ_term
    return EStepMoments(
        Q1=0.5 * (Q1 + Q1.T), Q2=0.5 * (Q2 + Q2.T), gamma_mean=stats.R @ H
    )


def e_step(tp: TransformedProblem, theta: ParameterSet, method: str = "blocked") -> EStepMoments:
    """Conditional moments ``E[(Y-Z G)'(Y-Z G) | Y]``, ``E[G'G | Y]`` and ``E[G | Y]``.

    ``method="blocked"`` uses the eigenbasis of ``Z'Z`` so only ``p`` small
    ``q x q`` systems are solved. ``method="dense"`` forms the full joint
    Gaussian of ``(vec(A G), vec(Y))`` for ``A = I`` and ``A = Z`` and is kept
    as a reference implementation.
    """
    if theta.q != tp.q:
        raise ValueError("parameter dimension does not match the data")
    if method == "blocked":
        return _moments(_Stats(tp), theta)
    if method == "dense":
        return _e_step_dense(tp, theta)
    raise ValueError(f"unknown E-step method {method!r}")


def _e_step_dense(tp: TransformedProblem, theta: ParameterSet) -> EStepMoments:
    Z, Y = tp.Z_t, tp.Y_t
    n, p, q = tp.n, tp.p, tp.q
    dinv = np.diag(theta.prior_variances())
    sigma = np.linalg.inv(theta.omega)
    y = vec(Y)
    S22 = kron(sigma, np.eye(n)) + kron(dinv, Z @ Z.T)
    S22 = 0.5 * (S22 + S22.T)
    try:
        solved = spd_solve(S22, np.hstack([y, kron(dinv, Z)]))
    except NumericalError as exc:
        raise NumericalError(f"marginal covariance of y is singular: {exc}", exc.condition) from exc
    S22inv_y = solved[:, :1]
    S22inv_S21 = solved[:, 1:]

    def moments(A):
        k = A.shape[0]
        S11 = kron(dinv, A @ A.T)
        S12 = kron(dinv, A @ Z.T)
        mean = unvec(S12 @ S22inv_y, k, q)
        # S22^{-1} S21 for this A is S22^{-1} (dinv x Z) A^T blockwise
        cov = S11 - S12 @ _right_apply(S22inv_S21, A.T, q)
        EGG = mean.T @ mean
        for i in range(q):
            for j in range(q):
                EGG[i, j] += np.trace(cov[i * k:(i + 1) * k, j * k:(j + 1) * k])
        return mean, EGG

    M, Q2 = moments(np.eye(p))
    _, EZZ = moments(Z)
    cross = Y.T @ Z @ M
    Q1 = Y.T @ Y - cross - cross.T + EZZ
    return EStepMoments(Q1=0.5 * (Q1 + Q1.T), Q2=0.5 * (Q2 + Q2.T), gamma_mean=M)


def _right_apply(X, At, q):
    # X = S22^{-1} (dinv kron Z), shape (nq, pq); returns S22^{-1} (dinv kron Z A^T)
    return X @ kron(np.eye(q), At)


def m_step_omega(Q1, n: int, lambda_omega: float, tol: float = GLASSO_TOL, warm=None):
    """Graphical lasso update of the rotated precision matrix with ``S = Q1 / n``."""
    return glasso_fit(np.asarray(Q1) / n, lambda_omega, tol=tol, warm=warm).omega


def variance_objective(Q2, p: int, sigma2: float, rho: float) -> float:
    """``tr(Delta Q2) / p - log|Delta|`` with ``Delta^{-1} = sigma2 * D_rho``."""
    q = Q2.shape[0]
    v = sigma2 * equicorr_eigenvalues(q, rho)
    return float(np.sum(np.diag(Q2) / v) / p + np.sum(np.log(v)))


def m_step_variance(Q2, p: int, q: int) -> tuple[float, float]:
    """Closed-form minimizer of :func:`variance_objective`.

    Only ``diag(Q2)`` matters since ``Delta`` is diagonal. The first eigenvalue
    group has variance ``v1 = Q2_11 / p``, the remaining ``q - 1`` share
    ``v2``; when ``v1 <= v2`` the constraint ``rho >= 0`` binds.
    """
    d = np.diag(np.asarray(Q2, dtype=float))
    if d.shape[0] != q:
        raise ValueError("Q2 dimension does not match q")
    if np.any(d <= 0):
        raise ValueError("Q2 must have a positive diagonal")
    if q == 1:
        return float(d[0] / p), 0.0
    v1 = d[0] / p
    v2 = d[1:].sum() / (p * (q - 1))
    if v1 > v2:
        rho = (v1 - v2) / (v1 + (q - 1) * v2)
        sigma2 = (v1 + (q - 1) * v2) / q
    else:
        rho = 0.0
        sigma2 = d.sum() / (p * q)
    if rho > RHO_MAX:
        rho = RHO_MAX
        sigma2 = float(np.mean(d / p / equicorr_eigenvalues(q, rho)))
    return float(sigma2), float(rho)


def blup(tp: TransformedProblem, theta: ParameterSet, form: str = "direct") -> np.ndarray:
    """E-BLUP of the coefficient matrix in the rotated basis.

    ``form="direct"`` solves the mixed-model equations
    ``(Zk' R^-1 Zk + L^-1) g = Zk' R^-1 y`` with ``Zk = I_q kron Z``;
    ``form="henderson"`` evaluates ``L Zk' Psi^-1 y`` with ``Psi = Zk L Zk' + R``.
    """
    Z, Y = tp.Z_t, tp.Y_t
    n, p, q = tp.n, tp.p, tp.q
    v = theta.prior_variances()
    y = vec(Y)
    Zk = kron(np.eye(q), Z)
    if form == "direct":
        lhs = kron(theta.omega, Z.T @ Z) + np.diag(np.repeat(1.0 / v, p))
        rhs = vec(Z.T @ Y @ theta.omega)
        g = spd_solve(0.5 * (lhs + lhs.T), rhs)
    elif form == "henderson":
        Lmat = np.diag(np.repeat(v, p))
        Psi = Zk @ Lmat @ Zk.T + kron(np.linalg.inv(theta.omega), np.eye(n))
        g = Lmat @ Zk.T @ spd_solve(0.5 * (Psi + Psi.T), y)
    else:
        raise ValueError(f"unknown BLUP form {form!r}")
    return unvec(g, p, q)


def neg_loglik(tp_or_stats, theta: ParameterSet) -> float:
    """Negative log marginal likelihood of ``Y`` (``Gamma`` integrated out)."""
    stats = tp_or_stats if isinstance(tp_or_stats, _Stats) else _Stats(tp_or_stats)
    P, _, b, H = _posterior(stats, theta)
    n, p, q = stats.n, stats.p, stats.q
    _, logdet_omega = np.linalg.slogdet(theta.omega)
    logdet_P = np.linalg.slogdet(P)[1].sum()
    v = theta.prior_variances()
    quad = np.sum(theta.omega * stats.YY) - np.sum(b * H)
    return 0.5 * (n * q * np.log(2 * np.pi) - n * logdet_omega + p * np.log(v).sum() + logdet_P + quad)


def penalized_objective(tp_or_stats, theta: ParameterSet, lambda_omega: float) -> float:
    """``(2/n) * neg_loglik + lambda_omega * sum_{j != k} |omega_jk|``.

    This is the quantity the EM iterations cannot increase: the ``2/n``
    scaling matches the ``1/n`` weighting of the residual term in the
    M-step for ``Omega``.
    """
    stats = tp_or_stats if isinstance(tp_or_stats, _Stats) else _Stats(tp_or_stats)
    om = theta.omega
    off = np.abs(om).sum() - np.abs(np.diag(om)).sum()
    return 2.0 / stats.n * neg_loglik(stats, theta) + lambda_omega * off


def _param_change(a: ParameterSet, b: ParameterSet) -> float:
    return float(np.abs(a.omega - b.omega).sum() + abs(a.sigma2 - b.sigma2) + abs(a.rho - b.rho))


def fit(data: Dataset, config: FitConfig = FitConfig(), theta0: ParameterSet | None = None) -> FitResult:
    """Run the EM iterations and return the E-BLUP together with the estimates.

    Reaching ``max_iter`` is not an error; the result has ``converged=False``.
    """
    if not data.centered:
        raise ValueError("data must be column-centered")
    if data.n < 2:
        raise ValueError("need at least two observations")
    tp = to_transformed(data, rotate_rows=False)
    stats = _Stats(tp)
    lam = config.lambda_omega
    theta = theta0 if theta0 is not None else ParameterSet.initial(data.q)
    trace = [penalized_objective(stats, theta, lam)]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        mom = _moments(stats, theta)
        omega = m_step_omega(mom.Q1, stats.n, lam, tol=config.glasso_tol)
        sigma2, rho = m_step_variance(mom.Q2, stats.p, stats.q)
        new = ParameterSet(omega, sigma2, rho)
        trace.append(penalized_objective(stats, new, lam))
        if config.stopping_rule == "parameter-change":
            done = _param_change(theta, new) < config.tol
        else:
            prev = trace[-2]
            done = abs(prev - trace[-1]) / max(abs(prev), np.finfo(float).tiny) < config.tol
        theta = new
        if done:
            converged = True
            break
    if not converged:
        log.info("EM stopped after %d iterations without meeting the tolerance", it)
    gamma_t = blup(tp, theta)
    omega_orig = back_transform_precision(theta.omega, tp.U)
    return FitResult(
        gamma_star=back_transform_gamma(gamma_t, tp.U),
        theta=ParameterSet(omega_orig, theta.sigma2, theta.rho),
        omega_transformed=theta.omega,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        lambda_omega=lam,
        gamma_transformed=gamma_t,
    )


def ridge_equivalence_check(tp: TransformedProblem, sigma_eps2: float, theta: ParameterSet) -> float:
    """Largest elementwise gap between the E-BLUP and the matching multivariate ridge.

    Requires ``theta.omega == I / sigma_eps2``. The ridge matrix is
    ``K = (Sigma0 kron I_p) Lambda^{-1}`` with ``Sigma0 = sigma_eps2 * I_q`` and
    ``Lambda = sigma2 D_rho kron I_p``, written in the same column-stacked
    coordinates as the BLUP.
    """
    q, p = tp.q, tp.p
    if not np.allclose(theta.omega, np.eye(q) / sigma_eps2, rtol=1e-10, atol=0):
        raise ValueError("ridge equivalence requires omega = I / sigma_eps2")
    g_blup = blup(tp, theta)
    Zk = kron(np.eye(q), tp.Z_t)
    Lam = np.diag(np.repeat(theta.prior_variances(), p))
    K = kron(sigma_eps2 * np.eye(q), np.eye(p)) @ np.linalg.inv(Lam)
    g_rr = np.linalg.solve(Zk.T @ Zk + K, Zk.T @ vec(tp.Y_t))
    return float(np.abs(vec(g_blup) - g_rr).max())


def default_lambda_grid(data: Dataset, n: int = 20, ratio: float = 1e-3) -> np.ndarray:
    """Decreasing log grid from the largest off-diagonal of ``Y_t'Y_t / n`` down by ``ratio``.

    Above that value the graphical lasso returns a diagonal precision for the
    marginal covariance of the rotated responses.
    """
    Yt = data.Y @ to_transformed(data, rotate_rows=False).U
    S = Yt.T @ Yt / data.n
    off = np.abs(S[~np.eye(data.q, dtype=bool)])
    top = off.max() if off.size and off.max() > 0 else 1.0
    return np.geomspace(top, ratio * top, n)


def select_lambda(data: Dataset, lambdas, folds: int = 3, config: FitConfig = FitConfig(), rng=None):
    """Choose ``lambda_omega`` by ``folds``-fold CV on validation predictive MSE.

    Returns ``(lambda, cv_table)`` where ``cv_table[i, f]`` is the validation
    MSE of ``lambdas[i]`` on fold ``f``. Ties go to the larger lambda; a cell
    whose fit raises scores ``inf``.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(lambdas < 0):
        raise ValueError("lambdas must be nonnegative")
    if folds < 2:
        raise ValueError("folds must be at least 2")
    rng = rng if isinstance(rng, np.random.Generator) else make_rng(0 if rng is None else rng)
    labels = kfold_split(data.n, folds, rng)
    table = np.empty((lambdas.size, folds))
    for f, (train_idx, test_idx) in enumerate(iter_folds(labels)):
        train = data.subset(train_idx)
        Z_val = data.Z[test_idx] + data.z_mean
        Y_val = data.Y[test_idx] + data.y_mean
        for i, lam in enumerate(lambdas):
            cfg = FitConfig(lam, config.tol, config.max_iter, config.stopping_rule, config.glasso_tol)
            try:
                res = fit(train, cfg)
            except NumericalError as exc:
                log.debug("CV cell lambda=%g fold=%d failed: %s", lam, f, exc)
                table[i, f] = np.inf
                continue
            table[i, f] = np.mean((Y_val - train.predict(res.gamma_star, Z_val)) ** 2)
    score = table.mean(axis=1)
    best = score.min()
    if not np.isfinite(best):
        raise NumericalError("every cross-validation cell failed")
    tied = np.flatnonzero(score == best)
    return float(lambdas[tied[np.argmax(lambdas[tied])]]), table


def fit_cv(data: Dataset, lambdas=None, folds: int = 3, config: FitConfig = FitConfig(), rng=None) -> FitResult:
    """:func:`select_lambda` followed by a full-data :func:`fit` at the chosen value."""
    lambdas = default_lambda_grid(data) if lambdas is None else lambdas
    lam, _ = select_lambda(data, lambdas, folds, config, rng)
    cfg = FitConfig(lam, config.tol, config.max_iter, config.stopping_rule, config.glasso_tol)
    return fit(data, cfg)
