"""Covariance models for the reduced-rank spatial effect.

Two variants of the r x r covariance K of the basis coefficients eta:

* ``GAP`` — the Givens-angle prior.  The orthogonal factor Phi is rebuilt
  from two parameters (a, b) that shift/scale the logit-transformed Givens
  angles of the data-derived factor Phi_Q, and K = Phi (phi * LambdaQ) Phi'.
  At (a, b) = (0, 1), Phi equals Phi_Q and K collapses to the Moran form.
* ``MI`` — the fixed-angle simplification K = phi * Psi'QPsi, with Phi held
  at Phi_Q and only the scale phi sampled.

K acts as the covariance of eta; quadratic forms use its inverse through
the spectral factorization, with near-zero eigenvalues floored to keep the
log-density finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .basis import MoranBasis, givens_reconstruct
from .errors import DataError, NumericalError

KIND_GAP = "GAP"
KIND_MI = "MI"

#: Relative floor applied to the spectrum of K for invertibility.
LAMBDA_FLOOR_RELTOL = 1e-10
#: Clamp for angle-to-(0,1) transforms before logit.
_ZETA_CLAMP = 1e-12


@dataclass(frozen=True)
class GapParams:
    """Parameters of the Givens-angle covariance: shift a, scale b, φ > 0."""

    a: float
    b: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise DataError("(a, b) must be finite")
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise DataError(f"phi must be positive, got {self.phi!r}")


@dataclass(frozen=True)
class CovarianceModel:
    """A covariance kind bound to a basis.

    ``kind`` determines which parameters are sampled: GAP samples (a, b)
    and phi, MI samples phi only.
    """

    kind: str
    basis: MoranBasis

    def __post_init__(self):
        if self.kind not in (KIND_GAP, KIND_MI):
            raise DataError(f"unknown covariance kind {self.kind!r}")

    @property
    def samples_angles(self):
        return self.kind == KIND_GAP


def logit_angles(g_angles):
    """Map raw Givens angles in [-pi/2, pi/2] to the logit scale.

    theta -> logit(1/2 + theta/pi), clamped so boundary angles stay finite.
    This is the angle covariate entering the (a, b) regression; at
    (a, b) = (0, 1) the inverse map reproduces the input angles exactly.
    """
    zeta = 0.5 + np.asarray(g_angles, dtype=float) / math.pi
    return logit(np.clip(zeta, _ZETA_CLAMP, 1.0 - _ZETA_CLAMP))


def gap_angles(a, b, basis):
    """Angles of the GAP orthogonal factor for parameters (a, b)."""
    zeta = expit(a + b * logit_angles(basis.g_angles))
    return math.pi * (zeta - 0.5)


def phi_from_gap(a, b, basis):
    """Orthogonal factor Phi(a, b) of the Givens-angle covariance.

    Each angle satisfies logit-scale regression
    logit(zeta_ij) = a + b * g_ij with theta_ij = pi * (zeta_ij - 1/2),
    and Phi is the canonical-order rotator product of those angles.
    """
    return givens_reconstruct(gap_angles(a, b, basis), basis.r)


def floored_spectrum(basis):
    """LambdaQ with zeros floored at ``LAMBDA_FLOOR_RELTOL * max``."""
    lam = np.asarray(basis.LambdaQ, dtype=float)
    lam_max = float(lam.max()) if lam.size else 0.0
    if lam_max <= 0.0:
        raise NumericalError("LambdaQ is identically zero; covariance undefined")
    return np.maximum(lam, LAMBDA_FLOOR_RELTOL * lam_max)


class KMatrix:
    """Spectral form of K: Phi diag(phi * lam) Phi' with inverse routines.

    Exposes the dense matrix, the log-determinant, the quadratic form
    eta'K^{-1}eta, the phi-free precision quadratic form
    eta' Phi diag(1/lam) Phi' eta (the conjugate-update statistic for phi),
    a sampler, and the full Gaussian log-density.
    """

    def __init__(self, Phi, lam, phi):
        self.Phi = np.asarray(Phi, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.phi = float(phi)
        if np.any(self.lam <= 0) or self.phi <= 0:
            raise NumericalError("K spectrum must be strictly positive after flooring")
        self.r = self.Phi.shape[0]

    @property
    def matrix(self):
        return (self.Phi * (self.phi * self.lam)) @ self.Phi.T

    @property
    def log_det(self):
        return self.r * math.log(self.phi) + float(np.sum(np.log(self.lam)))

    def precision_quad(self, eta):
        w = self.Phi.T @ np.asarray(eta, dtype=float)
        return float(np.sum(w * w / self.lam))

    def quad_form(self, eta):
        return self.precision_quad(eta) / self.phi

    def with_phi(self, phi):
        return KMatrix(self.Phi, self.lam, phi)

    def sample(self, rng):
        z = rng.standard_normal(self.r)
        return self.Phi @ (np.sqrt(self.phi * self.lam) * z)

    def logpdf(self, eta):
        return -0.5 * (self.r * math.log(2.0 * math.pi) + self.log_det + self.quad_form(eta))


def k_matrix(params, basis, kind=KIND_GAP):
    """Covariance of eta for the requested kind.

    GAP: K = Phi(a, b) (phi * LambdaQ) Phi(a, b)'.
    MI:  K = phi * Psi'QPsi, realized through the fixed factor Phi_Q.
    Near-zero LambdaQ entries are floored for invertibility.
    """
    if kind not in (KIND_GAP, KIND_MI):
        raise DataError(f"unknown covariance kind {kind!r}")
    lam = floored_spectrum(basis)
    if kind == KIND_GAP:
        Phi = phi_from_gap(params.a, params.b, basis)
    else:
        Phi = basis.PhiQ
    return KMatrix(Phi, lam, params.phi)
