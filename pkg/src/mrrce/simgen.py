"""Synthetic data for the simulation study.

Predictors have AR(1)-Toeplitz covariance, coefficients are a matrix-normal
draw with equicorrelated columns masked elementwise and by rows, and errors
follow one of four covariance structures given in the rotated response basis.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Dataset, equicorr_eigenbasis, equicorr_matrix
from .numerics import NumericalError, make_rng, sample_matrix_normal

ERROR_STRUCTURES = ("identity", "ar1", "fgn", "equicorr")


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    p: int = 20
    q: int = 5
    rho: float = 0.0
    sigma: float = 1.0
    s: float = 0.0
    s_g: float = 0.0
    rho_z: float = 0.7
    error_structure: str = "identity"
    rho_e: float = 0.0
    hurst: float = 0.95
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "p", "q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        for name in ("s", "s_g"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not -1.0 < self.rho_z < 1.0:
            raise ValueError("rho_z must lie in (-1, 1)")
        if self.error_structure not in ERROR_STRUCTURES:
            raise ValueError(f"error_structure must be one of {ERROR_STRUCTURES}")
        if not 0.0 < self.hurst < 1.0:
            raise ValueError("hurst must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimInstance:
    data: Dataset
    gamma_true: np.ndarray
    sigma_z: np.ndarray
    error_cov: np.ndarray
    E: np.ndarray = field(repr=False)


def toeplitz_ar(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_predictors(rng, n: int, p: int, rho_z: float) -> np.ndarray:
    if not -1.0 < rho_z < 1.0:
        raise ValueError("rho_z must lie in (-1, 1)")
    return sample_matrix_normal(rng, n, None, toeplitz_ar(p, rho_z))


def gen_coefficients(rng, p, q, sigma, rho, s, s_g) -> np.ndarray:
    """``W * K * Q`` with ``W`` matrix normal, ``K`` elementwise and ``Q`` row masks."""
    if not (0.0 <= s <= 1.0 and 0.0 <= s_g <= 1.0):
        raise ValueError("sparsity levels must lie in [0, 1]")
    W = sample_matrix_normal(rng, p, None, equicorr_matrix(q, rho))
    W = sigma * W
    K = rng.random((p, q)) < 1.0 - s
    Qrow = rng.random(p) < 1.0 - s_g
    return W * K * Qrow[:, None]


def fgn_cov(q: int, hurst: float) -> np.ndarray:
    k = np.abs(np.arange(q)[:, None] - np.arange(q)[None, :]).astype(float)
    h2 = 2.0 * hurst
    return 0.5 * ((k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)


def transformed_error_cov(structure: str, q: int, rho_e: float = 0.0, hurst: float = 0.95) -> np.ndarray:
    if structure == "identity":
        return np.eye(q)
    if structure == "ar1":
        return toeplitz_ar(q, rho_e)
    if structure == "fgn":
        return fgn_cov(q, hurst)
    if structure == "equicorr":
        return equicorr_matrix(q, rho_e)
    raise ValueError(f"unknown error structure {structure!r}")


def gen_error_cov(structure: str, q: int, U=None, rho_e: float = 0.0, hurst: float = 0.95) -> np.ndarray:
    """Error covariance in the original basis, ``U @ Sigma_t @ U.T``."""
    U = equicorr_eigenbasis(q) if U is None else np.asarray(U)
    sigma_t = transformed_error_cov(structure, q, rho_e, hurst)
    if np.linalg.eigvalsh(sigma_t)[0] <= 0:
        raise NumericalError(f"{structure} error covariance is not positive definite", condition=np.inf)
    out = U @ sigma_t @ U.T
    return 0.5 * (out + out.T)


def simulate(config: SimConfig, replication: int = 0) -> SimInstance:
    """Draw one replication; stream ``(seed, replication)`` fixes every random draw."""
    rng = make_rng(config.seed, replication)
    sigma_z = toeplitz_ar(config.p, config.rho_z)
    Z = sample_matrix_normal(rng, config.n, None, sigma_z)
    gamma = gen_coefficients(rng, config.p, config.q, config.sigma, config.rho, config.s, config.s_g)
    error_cov = gen_error_cov(config.error_structure, config.q, rho_e=config.rho_e, hurst=config.hurst)
    E = sample_matrix_normal(rng, config.n, None, error_cov)
    Y = Z @ gamma + E
    data = Dataset(Z, Y, centered=False)
    return SimInstance(data=data, gamma_true=gamma, sigma_z=sigma_z, error_cov=error_cov, E=E)


@dataclass(frozen=True)
class DailySeries:
    t: np.ndarray
    Y: np.ndarray
    gamma_true: np.ndarray
    features: np.ndarray = field(repr=False)


def synthetic_daily_series(
    n_days: int = 730,
    q: int = 2,
    rho: float = 0.95,
    sigma: float = 0.15,
    noise: float = 1.0,
    level: float = 20.0,
    seed: int = 0,
) -> DailySeries:
    """Positive daily series driven by the default seasonal/holiday/trend features.

    Features are standardized over the whole series, coefficients are one
    matrix-normal draw with column correlation ``rho`` and scale ``sigma``, and
    unit-variance noise is added around a constant ``level``.
    """
    from .evaluation import build_features, daily_recipe

    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = make_rng(seed)
    t = np.arange(n_days)
    X = build_features(daily_recipe(n_days), t)
    X = X[:, X.std(axis=0) > 0]
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    gamma = sigma * sample_matrix_normal(rng, X.shape[1], None, equicorr_matrix(q, rho))
    Y = level + X @ gamma + noise * rng.standard_normal((n_days, q))
    if np.any(Y.max(axis=0) <= 0):
        raise ValueError("level is too low for a positive series")
    return DailySeries(t=t, Y=Y, gamma_true=gamma, features=X)
