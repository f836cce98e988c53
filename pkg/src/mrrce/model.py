"""Equicorrelation structure, parameter sets and the rotation to diagonal-prior coordinates.

Rotating the responses by the (rho-independent) eigenbasis ``U`` of the
equicorrelation matrix and the observations by the eigenvectors ``L`` of
``Z Z^T`` turns the coefficient prior into independent columns with variances
``sigma2 * d_j(rho)``. All EM computations happen in that basis; the helpers at
the bottom of this module map estimates back.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_spd, sym_eigen

RHO_MAX = 1.0 - 1e-6


def equicorr_matrix(q: int, rho: float) -> np.ndarray:
    """``(1 - rho) I + rho J``."""
    return (1.0 - rho) * np.eye(q) + rho * np.ones((q, q))


def equicorr_eigenbasis(q: int) -> np.ndarray:
    """Orthonormal Helmert basis with the constant vector first.

    The result diagonalizes every equicorrelation matrix of size ``q`` with the
    eigenvalue ``1 + (q-1) rho`` in the first position.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    u = np.zeros((q, q))
    u[:, 0] = 1.0 / np.sqrt(q)
    for k in range(1, q):
        norm = np.sqrt(k * (k + 1.0))
        u[:k, k] = 1.0 / norm
        u[k, k] = -k / norm
    return u


def equicorr_eigenvalues(q: int, rho: float) -> np.ndarray:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    d = np.full(q, 1.0 - rho)
    d[0] = 1.0 + (q - 1) * rho
    return d


@dataclass(frozen=True)
class EquicorrStructure:
    q: int
    rho: float

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be at least 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")

    @property
    def matrix(self) -> np.ndarray:
        return equicorr_matrix(self.q, self.rho)

    @property
    def eigenvalues(self) -> np.ndarray:
        return equicorr_eigenvalues(self.q, self.rho)

    @property
    def basis(self) -> np.ndarray:
        return equicorr_eigenbasis(self.q)


@dataclass(frozen=True)
class ParameterSet:
    """Error precision ``omega``, coefficient variance ``sigma2`` and correlation ``rho``.

    ``omega`` is whatever basis the caller works in; the EM keeps it in the
    rotated basis and :func:`back_transform_precision` maps it back.
    """

    omega: np.ndarray
    sigma2: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "omega", as_spd(self.omega, "omega"))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.rho <= RHO_MAX:
            raise ValueError(f"rho must lie in [0, {RHO_MAX}], got {self.rho}")

    @property
    def q(self) -> int:
        return self.omega.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.linalg.inv(self.omega)

    def prior_variances(self) -> np.ndarray:
        """Diagonal of ``Delta^{-1} = sigma2 * D_rho`` in the rotated basis."""
        return self.sigma2 * equicorr_eigenvalues(self.q, self.rho)

    @classmethod
    def initial(cls, q: int) -> "ParameterSet":
        return cls(np.eye(q), 1.0, 0.0)


@dataclass(frozen=True)
class Dataset:
    Z: np.ndarray
    Y: np.ndarray
    z_mean: np.ndarray = field(default=None)
    y_mean: np.ndarray = field(default=None)
    centered: bool = True

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Z.shape[0] != Y.shape[0]:
            raise ValueError(f"Z has {Z.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Y", Y)
        if self.z_mean is None:
            object.__setattr__(self, "z_mean", np.zeros(Z.shape[1]))
        if self.y_mean is None:
            object.__setattr__(self, "y_mean", np.zeros(Y.shape[1]))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    def subset(self, rows) -> "Dataset":
        """Rows of the raw (de-centered) data, re-centered on the subset."""
        return center_columns(self.Z[rows] + self.z_mean, self.Y[rows] + self.y_mean)

    def center_new(self, Z_new) -> np.ndarray:
        return np.atleast_2d(np.asarray(Z_new, dtype=float)) - self.z_mean

    def predict(self, coef, Z_new) -> np.ndarray:
        """Predictions on the original response scale for raw predictors ``Z_new``."""
        return self.center_new(Z_new) @ coef + self.y_mean


def center_columns(Z, Y) -> Dataset:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Z.shape[0] < 2:
        raise ValueError("centering needs at least two observations")
    z_mean = Z.mean(axis=0)
    y_mean = Y.mean(axis=0)
    return Dataset(Z - z_mean, Y - y_mean, z_mean=z_mean, y_mean=y_mean, centered=True)


@dataclass(frozen=True)
class TransformedProblem:
    """Data rotated to the coordinates where the coefficient prior is diagonal.

    ``Y_t = L^T Y U`` and ``Z_t = L^T Z``; ``S`` holds the eigenvalues of
    ``Z Z^T`` (length ``n``, nonincreasing). ``L`` and ``S`` are ``None`` when
    the row rotation was skipped.
    """

    Y_t: np.ndarray
    Z_t: np.ndarray
    U: np.ndarray
    L: np.ndarray
    S: np.ndarray

    @property
    def n(self) -> int:
        return self.Y_t.shape[0]

    @property
    def p(self) -> int:
        return self.Z_t.shape[1]

    @property
    def q(self) -> int:
        return self.Y_t.shape[1]


def to_transformed(data: Dataset, rotate_rows: bool = True) -> TransformedProblem:
    """Rotate responses by the equicorrelation eigenbasis and rows by ``L^T``.

    Every EM quantity (conditional moments, likelihood, BLUP) is invariant to
    the orthogonal row rotation, so ``rotate_rows=False`` skips the ``n x n``
    eigendecomposition and keeps ``Z_t = Z``.
    """
    if not data.centered:
        raise ValueError("data must be column-centered")
    U = equicorr_eigenbasis(data.q)
    if not rotate_rows:
        return TransformedProblem(Y_t=data.Y @ U, Z_t=data.Z.copy(), U=U, L=None, S=None)
    eig = sym_eigen(data.Z @ data.Z.T)
    L = eig.vectors
    return TransformedProblem(Y_t=L.T @ data.Y @ U, Z_t=L.T @ data.Z, U=U, L=L, S=eig.values)


def back_transform_gamma(gamma_t, U) -> np.ndarray:
    return np.asarray(gamma_t) @ np.asarray(U).T


def back_transform_precision(omega_t, U) -> np.ndarray:
    omega_t = as_spd(omega_t, "omega_t")
    out = U @ omega_t @ U.T
    return 0.5 * (out + out.T)


def equicorr_inverse_coefficients(q: int, rho: float) -> tuple[float, float]:
    """``(a, b)`` with ``C_rho^{-1} = a I + b J``."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    a = 1.0 / (1.0 - rho)
    b = -rho / ((1.0 - rho) * (1.0 + (q - 1) * rho))
    return a, b


def equicorr_ridge_penalty(gamma, rho: float, eta: float = 1.0) -> float:
    """``eta * g' C_rho^{-1} g`` for one predictor's coefficient row, via ``(a, b)``.

    Written as ``eta * [a |g|^2 + b (sum g)^2]``; for ``q = 2`` this is
    ``eta * [(a + b) |g|^2 + 2 b g_1 g_2]``, so same-sign coefficients are
    penalized less when ``rho > 0``.
    """
    g = np.asarray(gamma, dtype=float).ravel()
    a, b = equicorr_inverse_coefficients(g.size, rho)
    return float(eta * (a * g @ g + b * g.sum() ** 2))
