"""Moran operator, reduced-rank basis extraction, and Givens-angle machinery."""

import math

import numpy as np
import pytest

from surveycos import (
    CovariateMatrix,
    DataError,
    NumericalError,
    adjacency_from_boundaries,
    moran_basis,
)
from surveycos.basis import (
    MoranBasis,
    build_basis,
    givens_extract,
    givens_reconstruct,
    graph_laplacian,
    moran_operator,
    rank_from_positive_count,
    rotate_coordinates,
)
from surveycos.errors import NonOrthogonalMatrixError, RankDeficiencyError

from conftest import square_grid


def random_symmetric_adjacency(n, rng, p=0.3):
    upper = rng.random((n, n)) < p
    adj = np.triu(upper, 1).astype(int)
    return adj + adj.T


def random_orthogonal(r, rng):
    q, rmat = np.linalg.qr(rng.standard_normal((r, r)))
    return q * np.sign(np.diag(rmat))


def column_sign_align(got, want):
    """Flip columns of ``got`` to best match ``want`` (inner-product sign)."""
    signs = np.sign(np.sum(got * want, axis=0))
    signs[signs == 0] = 1.0
    return got * signs


# -- Moran operator -----------------------------------------------------------

def test_moran_operator_matches_dense_projection():
    rng = np.random.default_rng(0)
    n = 20
    adj = random_symmetric_adjacency(n, rng)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    M = moran_operator(adj, X)
    P = np.eye(n) - X @ np.linalg.solve(X.T @ X, X.T)
    np.testing.assert_allclose(M, P @ adj @ P, atol=1e-12)
    np.testing.assert_allclose(M, M.T, atol=0)


def test_moran_operator_annihilates_covariates():
    rng = np.random.default_rng(1)
    n = 15
    adj = random_symmetric_adjacency(n, rng)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    M = moran_operator(adj, X)
    np.testing.assert_allclose(M @ X, np.zeros((n, 2)), atol=1e-10)


def test_moran_operator_input_validation():
    with pytest.raises(DataError):
        moran_operator(np.ones((3, 4)), np.ones((3, 1)))
    asym = np.array([[0, 1], [0, 0]])
    with pytest.raises(DataError):
        moran_operator(asym, np.ones((2, 1)))
    with pytest.raises(DataError):
        moran_operator(np.zeros((3, 3)), np.ones((4, 1)))
    n = 6
    X_singular = np.column_stack([np.ones(n), np.ones(n)])
    with pytest.raises(RankDeficiencyError):
        moran_operator(random_symmetric_adjacency(n, np.random.default_rng(2)), X_singular)


def test_graph_laplacian_row_sums_vanish():
    rng = np.random.default_rng(3)
    adj = random_symmetric_adjacency(12, rng)
    Q = graph_laplacian(adj)
    np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.diag(Q), adj.sum(axis=1), atol=0)
    np.testing.assert_allclose(Q - np.diag(np.diag(Q)), -adj, atol=0)


# -- rank rule ----------------------------------------------------------------

def test_rank_rule_reference_values():
    assert rank_from_positive_count(844, 0.10) == 85
    assert rank_from_positive_count(850, 0.10) == 85
    assert rank_from_positive_count(10, 0.10) == 1
    assert rank_from_positive_count(11, 0.10) == 2
    assert rank_from_positive_count(1, 0.10) == 1
    assert rank_from_positive_count(8, 0.25) == 2  # exact product stays exact
    assert rank_from_positive_count(40, 1.0) == 40


def test_rank_rule_monotone_and_bounded():
    prev = 0
    for n in range(1, 400):
        r = rank_from_positive_count(n, 0.10)
        assert 1 <= r <= n
        assert r >= prev
        prev = r


def test_rank_rule_rejects_bad_inputs():
    with pytest.raises(NumericalError):
        rank_from_positive_count(0, 0.10)
    with pytest.raises(DataError):
        rank_from_positive_count(10, 0.0)
    with pytest.raises(DataError):
        rank_from_positive_count(10, 1.5)


# -- basis extraction ---------------------------------------------------------

def test_basis_columns_are_leading_eigenvectors():
    grid = square_grid(4, 4)
    adj = adjacency_from_boundaries(grid)
    X = CovariateMatrix.intercept(16)
    basis = moran_basis(adj, X, fraction=0.25)
    M = moran_operator(adj, X)
    for k in range(basis.r):
        lhs = M @ basis.Psi[:, k]
        rhs = basis.eigenvalues[k] * basis.Psi[:, k]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert np.all(np.diff(basis.eigenvalues) <= 1e-12)


def test_basis_orthonormal_and_orthogonal_to_covariates():
    rng = np.random.default_rng(4)
    n = 30
    adj = random_symmetric_adjacency(n, rng)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    basis = moran_basis(adj, X, fraction=0.5)
    r = basis.r
    np.testing.assert_allclose(basis.Psi.T @ basis.Psi, np.eye(r), atol=1e-10)
    P = np.eye(n) - X @ np.linalg.solve(X.T @ X, X.T)
    np.testing.assert_allclose(P @ basis.Psi, basis.Psi, atol=1e-10)


def test_basis_spectral_factors_reproduce_small_operator():
    grid = square_grid(4, 4)
    adj = adjacency_from_boundaries(grid)
    X = CovariateMatrix.intercept(16)
    basis = moran_basis(adj, X, fraction=0.3)
    S = basis.Psi.T @ basis.Q @ basis.Psi
    recon = basis.PhiQ @ np.diag(basis.LambdaQ) @ basis.PhiQ.T
    np.testing.assert_allclose(recon, S, atol=1e-10)
    # independent spectral oracle
    want = np.sort(np.linalg.eigvalsh(S))[::-1]
    np.testing.assert_allclose(basis.LambdaQ, np.clip(want, 0.0, None), atol=1e-10)


def test_basis_rank_override_and_fraction_rule():
    rng = np.random.default_rng(5)
    n = 40
    adj = random_symmetric_adjacency(n, rng)
    X = np.ones((n, 1))
    M = moran_operator(adj, X)
    vals = np.linalg.eigvalsh(M)
    n_pos = int(np.sum(vals > 1e-10 * np.max(np.abs(vals))))
    basis = moran_basis(adj, X, fraction=0.10)
    assert basis.r == rank_from_positive_count(n_pos, 0.10)
    assert moran_basis(adj, X, r=7).r == 7
    with pytest.raises(DataError):
        moran_basis(adj, X, r=n + 1)


def test_basis_requires_positive_spectrum():
    with pytest.raises(NumericalError):
        build_basis(-np.eye(5), adjacency=np.zeros((5, 5), dtype=int))


def test_basis_deterministic_serialization():
    grid = square_grid(4, 3)
    adj = adjacency_from_boundaries(grid)
    X = CovariateMatrix.intercept(12)
    b1 = moran_basis(adj, X, fraction=0.4)
    b2 = moran_basis(adj, X, fraction=0.4)
    assert b1.to_bytes() == b2.to_bytes()
    back = MoranBasis.from_bytes(b1.to_bytes())
    np.testing.assert_array_equal(back.Psi, b1.Psi)
    np.testing.assert_array_equal(back.LambdaQ, b1.LambdaQ)
    np.testing.assert_array_equal(back.g_angles, b1.g_angles)
    assert back.r == b1.r


def test_basis_serialization_detects_corruption():
    grid = square_grid(3, 3)
    adj = adjacency_from_boundaries(grid)
    basis = moran_basis(adj, CovariateMatrix.intercept(9), fraction=0.4)
    blob = bytearray(basis.to_bytes())
    blob[-5] ^= 0xFF
    with pytest.raises(DataError):
        MoranBasis.from_bytes(bytes(blob))


def test_basis_column_sign_convention():
    rng = np.random.default_rng(6)
    n = 25
    adj = random_symmetric_adjacency(n, rng)
    basis = moran_basis(adj, np.ones((n, 1)), fraction=0.5)
    for k in range(basis.r):
        col = basis.Psi[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        assert col[nz[0]] > 0


# -- Givens machinery ---------------------------------------------------------

def test_givens_identity_has_zero_angles():
    angles = givens_extract(np.eye(5))
    np.testing.assert_allclose(angles, 0.0, atol=1e-15)
    np.testing.assert_array_equal(givens_reconstruct(angles, 5), np.eye(5))


def test_givens_two_by_two_rotation_angle():
    theta = 0.3
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    angles = givens_extract(rot)
    assert angles.shape == (1,)
    assert angles[0] == pytest.approx(theta, abs=1e-14)
    np.testing.assert_allclose(givens_reconstruct(angles, 2), rot, atol=1e-14)


def test_givens_round_trip_up_to_column_signs():
    rng = np.random.default_rng(7)
    for r in (2, 3, 5, 8):
        Phi = random_orthogonal(r, rng)
        angles = givens_extract(Phi)
        assert angles.shape == (r * (r - 1) // 2,)
        assert np.all(angles > -math.pi / 2) and np.all(angles <= math.pi / 2)
        rec = column_sign_align(givens_reconstruct(angles, r), Phi)
        np.testing.assert_allclose(rec, Phi, atol=1e-10)


def test_givens_round_trip_handles_reflections():
    rng = np.random.default_rng(8)
    Phi = random_orthogonal(4, rng)
    Phi[:, 0] = -Phi[:, 0]  # determinant -1
    rec = column_sign_align(givens_reconstruct(givens_extract(Phi), 4), Phi)
    np.testing.assert_allclose(rec, Phi, atol=1e-10)


def test_givens_rejects_non_orthogonal_input():
    with pytest.raises(NonOrthogonalMatrixError):
        givens_extract(np.arange(9.0).reshape(3, 3))
    with pytest.raises(DataError):
        givens_extract(np.ones((2, 3)))


def test_givens_reconstruct_checks_angle_count():
    with pytest.raises(DataError):
        givens_reconstruct(np.zeros(4), 3)


def test_rotate_coordinates_matches_transposed_product():
    rng = np.random.default_rng(9)
    for r in (3, 6):
        angles = rng.uniform(-math.pi / 2, math.pi / 2, size=r * (r - 1) // 2)
        Phi = givens_reconstruct(angles, r)
        v = rng.standard_normal(r)
        np.testing.assert_allclose(rotate_coordinates(angles, r, v), Phi.T @ v, atol=1e-12)
