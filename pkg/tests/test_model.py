import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrrce.model import (
    RHO_MAX,
    Dataset,
    EquicorrStructure,
    ParameterSet,
    back_transform_gamma,
    back_transform_precision,
    center_columns,
    equicorr_eigenbasis,
    equicorr_eigenvalues,
    equicorr_matrix,
    to_transformed,
)
from mrrce.numerics import NumericalError, make_rng, sample_matrix_normal

from conftest import random_spd


def test_eigenbasis_q1():
    np.testing.assert_array_equal(equicorr_eigenbasis(1), [[1.0]])
    np.testing.assert_array_equal(equicorr_eigenvalues(1, 0.3), [1.0])


def test_eigenbasis_q2():
    u = equicorr_eigenbasis(2)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(u, [[s, s], [s, -s]], atol=1e-15)
    np.testing.assert_allclose(u.T @ equicorr_matrix(2, 0.5) @ u, np.diag([1.5, 0.5]), atol=1e-15)


def test_eigenbasis_q5_rho08():
    u = equicorr_eigenbasis(5)
    np.testing.assert_allclose(u.T @ equicorr_matrix(5, 0.8) @ u, np.diag([4.2, 0.2, 0.2, 0.2, 0.2]), atol=1e-12)


@pytest.mark.parametrize("q", range(2, 11))
@pytest.mark.parametrize("rho", [0.0, 0.2, 0.4, 0.6, 0.8])
def test_single_basis_diagonalizes_every_rho(q, rho):
    u = equicorr_eigenbasis(q)
    d = u.T @ equicorr_matrix(q, rho) @ u
    assert np.abs(d - np.diag(equicorr_eigenvalues(q, rho))).max() <= 1e-12
    np.testing.assert_allclose(u.T @ u, np.eye(q), atol=1e-12)
    np.testing.assert_allclose(u[:, 0], 1 / np.sqrt(q))


def test_eigenvalues_closed_form():
    np.testing.assert_array_equal(equicorr_eigenvalues(4, 0.0), np.ones(4))
    np.testing.assert_allclose(equicorr_eigenvalues(3, 0.5), [2, 0.5, 0.5])
    with pytest.raises(ValueError):
        equicorr_eigenvalues(3, 1.0)
    with pytest.raises(ValueError):
        equicorr_eigenvalues(3, -0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.floats(0, 0.999))
def test_eigenvalues_trace_and_det(q, rho):
    d = equicorr_eigenvalues(q, rho)
    assert abs(d.sum() - q) <= 1e-12 * q
    c = equicorr_matrix(q, rho)
    np.testing.assert_allclose(np.prod(d), np.linalg.det(c), rtol=1e-8, atol=1e-300)


def test_structure_validates():
    with pytest.raises(ValueError):
        EquicorrStructure(3, 1.2)
    s = EquicorrStructure(3, 0.3)
    np.testing.assert_allclose(s.basis.T @ s.matrix @ s.basis, np.diag(s.eigenvalues), atol=1e-14)


def test_parameter_set_validation():
    with pytest.raises(NumericalError):
        ParameterSet(np.diag([1.0, -1.0]), 1.0, 0.0)
    with pytest.raises(ValueError):
        ParameterSet(np.eye(2), 0.0, 0.0)
    with pytest.raises(ValueError):
        ParameterSet(np.eye(2), 1.0, 1.0)
    th = ParameterSet(np.eye(2), 2.0, RHO_MAX)
    np.testing.assert_allclose(th.prior_variances(), 2.0 * equicorr_eigenvalues(2, RHO_MAX))


def test_center_columns_arithmetic():
    Z = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    Y = np.array([1.0, 2.0, 3.0])
    d = center_columns(Z, Y)
    np.testing.assert_allclose(d.Y.ravel(), [-1, 0, 1])
    np.testing.assert_allclose(d.y_mean, [2.0])
    np.testing.assert_array_equal(d.Z[:, 1], 0.0)
    np.testing.assert_allclose(d.z_mean, [2.0, 5.0])
    again = center_columns(d.Z, d.Y)
    np.testing.assert_allclose(again.Z, d.Z, atol=1e-15)
    with pytest.raises(ValueError):
        center_columns(Z[:1], Y[:1])


def test_dataset_rejects_mismatch_and_nan():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), np.ones((4, 1)))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.ones((1, 1)))


def test_subset_recenters(rng):
    d = center_columns(rng.standard_normal((10, 3)) + 4.0, rng.standard_normal((10, 2)))
    sub = d.subset(np.arange(6))
    np.testing.assert_allclose(sub.Z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(sub.Z + sub.z_mean, d.Z[:6] + d.z_mean)


def test_to_transformed_invariants(rng):
    d = center_columns(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
    tp = to_transformed(d)
    np.testing.assert_allclose((tp.L * tp.S) @ tp.L.T, d.Z @ d.Z.T, atol=1e-8)
    np.testing.assert_allclose(tp.Y_t, tp.L.T @ d.Y @ tp.U, atol=1e-12)
    assert abs(np.linalg.norm(tp.Y_t) - np.linalg.norm(d.Y)) <= 1e-10
    assert abs(np.linalg.norm(tp.Z_t) - np.linalg.norm(d.Z)) <= 1e-10
    assert np.all(tp.S >= 0)


def test_to_transformed_identity_design(rng):
    d = Dataset(np.eye(4), rng.standard_normal((4, 1)))
    tp = to_transformed(d)
    np.testing.assert_allclose(tp.S, 1.0)
    np.testing.assert_allclose(tp.U, [[1.0]])
    np.testing.assert_allclose(tp.Y_t, tp.L.T @ d.Y)


def test_to_transformed_requires_centering():
    with pytest.raises(ValueError):
        to_transformed(Dataset(np.ones((3, 1)), np.ones((3, 1)), centered=False))


def test_back_transforms_round_trip(rng):
    u = equicorr_eigenbasis(5)
    g = rng.standard_normal((7, 5))
    assert np.abs(back_transform_gamma(g @ u, u) - g).max() <= 1e-12
    np.testing.assert_array_equal(back_transform_gamma(g, np.eye(5)), g)
    om = random_spd(rng, 4)
    u4 = equicorr_eigenbasis(4)
    full = back_transform_precision(om, u4)
    np.testing.assert_allclose(u4.T @ full @ u4, om, atol=1e-10)
    np.testing.assert_allclose(np.linalg.eigvalsh(full), np.linalg.eigvalsh(om), atol=1e-10)
    np.testing.assert_allclose(back_transform_precision(np.eye(4), u4), np.eye(4), atol=1e-14)


def test_rotated_coefficients_have_diagonal_covariance():
    r = make_rng(3)
    q, rho, sigma2 = 4, 0.6, 1.7
    w = sample_matrix_normal(r, 100_000, None, sigma2 * equicorr_matrix(q, rho))
    cov = np.cov((w @ equicorr_eigenbasis(q)).T)
    target = sigma2 * np.diag(equicorr_eigenvalues(q, rho))
    np.testing.assert_allclose(np.diag(cov), np.diag(target), rtol=0.03)
    assert np.abs(cov - np.diag(np.diag(cov))).max() <= 0.03 * target.max()
