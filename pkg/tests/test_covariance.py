"""Spectral covariance of the spatial random effects and its angle map."""

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from surveycos import CovariateMatrix, DataError, NumericalError, adjacency_from_boundaries, moran_basis
from surveycos.covariance import (
    KIND_GAP,
    KIND_MI,
    CovarianceModel,
    GapParams,
    KMatrix,
    floored_spectrum,
    gap_angles,
    k_matrix,
    logit_angles,
    phi_from_gap,
)

from conftest import square_grid


@pytest.fixture(scope="module")
def basis():
    grid = square_grid(4, 4)
    adj = adjacency_from_boundaries(grid)
    return moran_basis(adj, CovariateMatrix.intercept(16), fraction=0.3)


# -- parameters and kinds -------------------------------------------------------

def test_gap_params_validation():
    GapParams(a=0.0, b=1.0, phi=2.0)
    with pytest.raises(DataError):
        GapParams(a=0.0, b=1.0, phi=0.0)
    with pytest.raises(DataError):
        GapParams(a=math.inf, b=1.0, phi=1.0)


def test_covariance_model_kinds(basis):
    assert CovarianceModel(kind=KIND_GAP, basis=basis).samples_angles
    assert not CovarianceModel(kind=KIND_MI, basis=basis).samples_angles
    with pytest.raises(DataError):
        CovarianceModel(kind="CAR", basis=basis)


# -- angle map -------------------------------------------------------------------

def test_logit_angles_center_and_symmetry():
    assert logit_angles(0.0) == pytest.approx(0.0, abs=1e-15)
    g = logit_angles(np.array([0.4, -0.4]))
    assert g[0] == pytest.approx(-g[1], rel=1e-12)
    # boundary angles stay finite thanks to clamping
    assert np.all(np.isfinite(logit_angles(np.array([-math.pi / 2, math.pi / 2]))))


def test_identity_parameters_reproduce_raw_angles(basis):
    np.testing.assert_allclose(gap_angles(0.0, 1.0, basis), basis.g_angles, atol=1e-10)


def test_zero_slope_at_zero_intercept_gives_identity_factor(basis):
    Phi = phi_from_gap(0.0, 0.0, basis)
    np.testing.assert_allclose(Phi, np.eye(basis.r), atol=1e-12)


def test_extreme_intercept_saturates_angles(basis):
    ang = gap_angles(-40.0, 1.0, basis)
    assert np.all(ang > -math.pi / 2 - 1e-9)
    assert np.all(ang < -math.pi / 2 + 1e-3)
    assert np.all(np.isfinite(phi_from_gap(40.0, 1.0, basis)))


# -- K matrix ----------------------------------------------------------------------

def test_k_matrix_identity_factor_closed_form():
    K = KMatrix(np.eye(2), np.array([1.0, 1.0]), 2.0)
    np.testing.assert_allclose(K.matrix, 2.0 * np.eye(2), atol=1e-15)
    assert K.log_det == pytest.approx(2.0 * math.log(2.0), rel=1e-14)
    eta = np.array([1.0, 2.0])
    assert K.quad_form(eta) == pytest.approx(5.0 / 2.0, rel=1e-14)
    assert K.precision_quad(eta) == pytest.approx(5.0, rel=1e-14)


def test_k_matrix_against_dense_oracle(basis):
    rng = np.random.default_rng(11)
    params = GapParams(a=0.3, b=0.8, phi=1.7)
    K = k_matrix(params, basis, kind=KIND_GAP)
    dense = K.matrix
    sign, logdet = np.linalg.slogdet(dense)
    assert sign > 0
    assert K.log_det == pytest.approx(logdet, rel=1e-10)
    for _ in range(5):
        eta = rng.standard_normal(basis.r)
        want = eta @ np.linalg.solve(dense, eta)
        assert K.quad_form(eta) == pytest.approx(want, rel=1e-9)
        assert K.precision_quad(eta) == pytest.approx(want * params.phi, rel=1e-9)


def test_k_matrix_logpdf_matches_scipy(basis):
    rng = np.random.default_rng(12)
    K = k_matrix(GapParams(a=-0.2, b=1.3, phi=0.6), basis, kind=KIND_GAP)
    mvn = multivariate_normal(mean=np.zeros(basis.r), cov=K.matrix)
    for _ in range(3):
        eta = rng.standard_normal(basis.r)
        assert K.logpdf(eta) == pytest.approx(mvn.logpdf(eta), rel=1e-10)


def test_k_matrix_phi_rescaling(basis):
    K = k_matrix(GapParams(a=0.1, b=0.9, phi=2.0), basis, kind=KIND_GAP)
    K3 = K.with_phi(3.0)
    np.testing.assert_allclose(K3.matrix, (3.0 / 2.0) * K.matrix, rtol=1e-12, atol=1e-12)
    eta = np.linspace(0.1, 1.0, basis.r)
    assert K3.precision_quad(eta) == pytest.approx(K.precision_quad(eta), rel=1e-12)


def test_k_matrix_sampler_covariance(basis):
    rng = np.random.default_rng(13)
    K = k_matrix(GapParams(a=0.0, b=1.0, phi=1.5), basis, kind=KIND_GAP)
    draws = np.array([K.sample(rng) for _ in range(40_000)])
    emp = np.cov(draws.T)
    scale = np.max(np.abs(K.matrix))
    assert np.max(np.abs(emp - K.matrix)) < 0.05 * scale


def test_k_matrix_rejects_bad_spectrum():
    with pytest.raises(NumericalError):
        KMatrix(np.eye(2), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(NumericalError):
        KMatrix(np.eye(2), np.array([1.0, 1.0]), -1.0)


def test_floored_spectrum_positive(basis):
    lam = floored_spectrum(basis)
    assert np.all(lam > 0)
    assert lam.max() == pytest.approx(float(basis.LambdaQ.max()), rel=1e-14)


def test_gap_at_identity_equals_fixed_factor_kind(basis):
    """The angle-regression covariance at (0, 1) collapses to the fixed-factor kind."""
    phi = 1.7
    K_gap = k_matrix(GapParams(a=0.0, b=1.0, phi=phi), basis, kind=KIND_GAP)
    K_mi = k_matrix(GapParams(a=0.0, b=1.0, phi=phi), basis, kind=KIND_MI)
    np.testing.assert_allclose(K_gap.matrix, K_mi.matrix, atol=1e-10)
    rng = np.random.default_rng(14)
    for _ in range(5):
        eta = rng.standard_normal(basis.r)
        assert K_gap.quad_form(eta) == pytest.approx(K_mi.quad_form(eta), rel=1e-8)


def test_unknown_kind_rejected(basis):
    with pytest.raises(DataError):
        k_matrix(GapParams(a=0.0, b=1.0, phi=1.0), basis, kind="ICAR")
