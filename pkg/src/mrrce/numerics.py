"""Dense linear algebra and random sampling shared by the rest of the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

SYMMETRY_RTOL = 1e-10
PSD_CLAMP = 1e-12


class NumericalError(ArithmeticError):
    """Raised when a factorization or solve cannot be carried out reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class EigenFactorization:
    """Symmetric eigendecomposition with eigenvalues in nonincreasing order."""

    vectors: np.ndarray
    values: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def check_symmetric(m, name="matrix", rtol=SYMMETRY_RTOL):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return m


def as_spd(m, name="matrix") -> np.ndarray:
    """Validate that ``m`` is symmetric positive definite and return it as float array."""
    m = check_symmetric(m, name)
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite", condition=np.inf) from None
    return m


def sym_eigen(m, psd=True) -> EigenFactorization:
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted nonincreasing.

    When ``psd`` is set, eigenvalues whose magnitude is below ``1e-12`` times the
    largest eigenvalue are clamped to zero (Gram matrices of wide predictors
    are rank deficient by construction).
    """
    m = check_symmetric(m)
    m = 0.5 * (m + m.T)
    values, vectors = np.linalg.eigh(m)
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    if psd and values.size:
        cut = PSD_CLAMP * max(values[0], 0.0)
        values[np.abs(values) <= cut] = 0.0
        values[(values < 0) & (values > -cut)] = 0.0
    return EigenFactorization(vectors=vectors, values=values)


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not conformable")
    try:
        factor = linalg.cho_factor(a, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise NumericalError("matrix is not positive definite", condition=_condition(a)) from None
    x = linalg.cho_solve(factor, b)
    diag = np.diag(factor[0])
    cond_est = (diag.max() / diag.min()) ** 2
    if not np.isfinite(cond_est) or cond_est > 1e15:
        raise NumericalError("matrix is numerically singular", condition=cond_est)
    return x


def _condition(a):
    try:
        return float(np.linalg.cond(a))
    except np.linalg.LinAlgError:
        return np.inf


def kron(a, b) -> np.ndarray:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into a single column vector."""
    m = np.atleast_2d(np.asarray(m))
    return m.reshape(-1, 1, order="F")


def unvec(v, rows, cols) -> np.ndarray:
    v = np.asarray(v).ravel()
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape vector of length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def sqrtm_psd(m) -> np.ndarray:
    """Symmetric square root of a PSD matrix via :func:`sym_eigen`."""
    eig = sym_eigen(m)
    if eig.values.size and eig.values[-1] < 0:
        raise NumericalError("covariance has a negative eigenvalue", condition=np.inf)
    return (eig.vectors * np.sqrt(eig.values)) @ eig.vectors.T


def make_rng(seed, *index) -> np.random.Generator:
    """Counter-based generator for stream ``(seed, *index)``.

    Streams with different ``index`` tuples are independent children of the
    same root seed, so replication ``r`` can use ``make_rng(seed, r)`` from any
    worker without sharing state.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(seq))


def sample_matrix_normal(rng, n, row_cov, col_cov) -> np.ndarray:
    """Draw an ``n x q`` matrix from MVN(0, row_cov, col_cov).

    ``row_cov=None`` stands for the identity. The draw is ``A @ Z0 @ B.T`` with
    ``A``, ``B`` symmetric square roots of the two covariances.
    """
    col_cov = as_spd(np.atleast_2d(np.asarray(col_cov, dtype=float)), "col_cov")
    q = col_cov.shape[0]
    z0 = rng.standard_normal((n, q))
    draw = z0 @ sqrtm_psd(col_cov)
    if row_cov is not None:
        row_cov = as_spd(row_cov, "row_cov")
        if row_cov.shape[0] != n:
            raise ValueError("row_cov dimension does not match n")
        draw = sqrtm_psd(row_cov) @ draw
    return draw
