"""Log-density components of the hierarchical change-of-support model.

Data model
    counts   Z(A) ~ Poisson(mu(A)) on every observed support, with
             mu(A_{l,j}) = h_l(j)' mu1 for coarse units;
    variances log(sigma2_obs) = log(mu(A)) + eps, eps ~ N(0, sigma2_eps_obs)
             (the reported variance is lognormal with median mu(A)).
Process model
    Y1 = X beta + Psi eta + xi,  mu1 = exp(Y1);
    eta ~ N(0, K(a, b, phi));  xi_i ~ N(0, sigma2_gamma).
Parameter model
    beta ~ N(mu_beta, sigma2_beta I); (a, b) ~ N(mu_Phi, sigma2_Phi I)
    (covariance kinds that sample angles only); phi, each sigma2_eps, and
    sigma2_gamma inverse-gamma.

Three model variants are supported: the full model ("CS"), the
variance-removed variant ("VR", drops the variance data model), and the
fixed-angle variant ("MI", covariance kind MI).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .covariance import KIND_GAP, KIND_MI, CovarianceModel, GapParams, k_matrix
from .data import SurveyDataset
from .errors import DataError, NonfiniteStateError

#: |Y| beyond this raises rather than overflowing exp.
OVERFLOW_GUARD = 700.0


@dataclass(frozen=True)
class ModelVariant:
    """Feature switches distinguishing the model variants."""

    name: str
    covariance_kind: str
    variance_model: bool  # include the survey-variance data model
    samples_angles: bool  # sample (a, b)


MODEL_VARIANTS = {
    "CS": ModelVariant("CS", KIND_GAP, variance_model=True, samples_angles=True),
    "VR": ModelVariant("VR", KIND_GAP, variance_model=False, samples_angles=True),
    "MI": ModelVariant("MI", KIND_MI, variance_model=True, samples_angles=False),
}


def get_variant(name):
    try:
        return MODEL_VARIANTS[name.upper()] if isinstance(name, str) else name
    except KeyError:
        raise DataError(f"unknown model kind {name!r}; expected one of {sorted(MODEL_VARIANTS)}") from None


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyperparameters with the package's vague defaults.

    ``mu_beta`` broadcasts to the number of covariate columns.  The
    defaults (huge Gaussian variances, unit inverse-gamma shapes/scales)
    are intended for data analysis; tests that simulate from the prior
    should pass moderate values instead.
    """

    mu_beta: np.ndarray = 0.0
    sigma2_beta: float = 1e15
    alpha_phi: float = 1.0
    omega_phi: float = 1.0
    mu_Phi: tuple = (0.0, 1.0)
    sigma2_Phi: float = 1e15
    alpha_eps: float = 1.0
    omega_eps: float = 1.0
    alpha_gamma: float = 1.0
    omega_gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu_beta", np.atleast_1d(np.asarray(self.mu_beta, dtype=float)))
        object.__setattr__(self, "mu_Phi", tuple(float(v) for v in self.mu_Phi))
        if len(self.mu_Phi) != 2:
            raise DataError("mu_Phi must have exactly two entries (for a and b)")
        for name in ("sigma2_beta", "alpha_phi", "omega_phi", "sigma2_Phi",
                     "alpha_eps", "omega_eps", "alpha_gamma", "omega_gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"hyperparameter {name} must be positive and finite, got {v!r}")

    def mu_beta_vector(self, p):
        mu = self.mu_beta
        if mu.size == 1:
            return np.full(p, float(mu[0]))
        if mu.size != p:
            raise DataError(f"mu_beta has {mu.size} entries but the design has {p} columns")
        return mu.astype(float)


@dataclass(frozen=True, eq=False)
class ModelState:
    """One point in the posterior's parameter space."""

    beta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    a: float
    b: float
    phi: float
    sigma2_eps: np.ndarray
    sigma2_gamma: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "sigma2_eps", np.atleast_1d(np.asarray(self.sigma2_eps, dtype=float)))
        if not (self.phi > 0 and self.sigma2_gamma > 0 and np.all(self.sigma2_eps > 0)):
            raise DataError("phi, sigma2_gamma and every sigma2_eps must be strictly positive")

    def gap_params(self):
        return GapParams(a=self.a, b=self.b, phi=self.phi)

    def copy(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LatentMeans:
    """Latent log-means and the implied means on every observed support."""

    Y1: np.ndarray
    mu1: np.ndarray
    mu_coarse: np.ndarray
    mu_obs: np.ndarray


def latent_means(state, X, Psi, data=None):
    """Compute Y1 = X beta + Psi eta + xi and the implied support means.

    Raises NonfiniteStateError when any |Y1| exceeds the overflow guard,
    so callers can treat wild proposals as rejections instead of letting
    exp() overflow.
    """
    Y1 = X @ state.beta + Psi @ state.eta + state.xi
    if not np.all(np.abs(Y1) <= OVERFLOW_GUARD):
        raise NonfiniteStateError("latent log-mean left the overflow guard (|Y| > 700)")
    mu1 = np.exp(Y1)
    if data is not None and data.coarse_weights.shape[0]:
        mu_coarse = data.coarse_weights @ mu1
    else:
        mu_coarse = np.zeros(0)
    return LatentMeans(Y1=Y1, mu1=mu1, mu_coarse=mu_coarse,
                       mu_obs=np.concatenate([mu1, mu_coarse]))


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def invgamma_logpdf(x, alpha, omega):
    """Inverse-gamma log-density with shape alpha and scale omega."""
    x = np.asarray(x, dtype=float)
    return alpha * math.log(omega) - gammaln(alpha) - (alpha + 1.0) * np.log(x) - omega / x


def log_lik_counts(state, data, X, Psi, means=None):
    """Poisson log-likelihood over all observed supports.

    The data-only log-factorial constant is omitted (counts may be
    non-integer design-based estimates).
    """
    if means is None:
        means = latent_means(state, X, Psi, data)
    z = data.counts_stacked
    log_mu = np.concatenate([means.Y1, np.log(means.mu_coarse)]) if means.mu_coarse.size else means.Y1
    return float(np.sum(z * log_mu - means.mu_obs))


def log_lik_variances(state, data, X, Psi, variant="CS", means=None):
    """Lognormal survey-variance log-likelihood (0 for the VR variant).

    Observations with zero reported variance contribute nothing (their
    terms are dropped at dataset construction with a warning).
    """
    variant = get_variant(variant)
    if not variant.variance_model:
        return 0.0
    if not data.has_variances:
        raise DataError(
            f"model kind {variant.name!r} requires reported sampling variances on every level"
        )
    if means is None:
        means = latent_means(state, X, Psi, data)
    mask = data.variance_mask()
    if not np.any(mask):
        return 0.0
    v = data.variances_stacked[mask]
    log_mu = np.log(means.mu_obs[mask])
    s2e = state.sigma2_eps[mask]
    return float(np.sum(normal_logpdf(np.log(v), log_mu, s2e)))


def log_prior(state, hyper, cov):
    """Sum of all prior terms for the given covariance model.

    The (a, b) Gaussian term enters only for covariance kinds that sample
    angles (GAP); inverse-gamma terms use shape/scale parameterization.
    """
    kmat = k_matrix(state.gap_params(), cov.basis, cov.kind)
    p = state.beta.size
    mu_beta = hyper.mu_beta_vector(p)
    total = float(np.sum(normal_logpdf(state.beta, mu_beta, hyper.sigma2_beta)))
    total += kmat.logpdf(state.eta)
    total += float(np.sum(normal_logpdf(state.xi, 0.0, state.sigma2_gamma)))
    if cov.samples_angles:
        total += float(normal_logpdf(state.a, hyper.mu_Phi[0], hyper.sigma2_Phi))
        total += float(normal_logpdf(state.b, hyper.mu_Phi[1], hyper.sigma2_Phi))
    total += float(invgamma_logpdf(state.phi, hyper.alpha_phi, hyper.omega_phi))
    total += float(np.sum(invgamma_logpdf(state.sigma2_eps, hyper.alpha_eps, hyper.omega_eps)))
    total += float(invgamma_logpdf(state.sigma2_gamma, hyper.alpha_gamma, hyper.omega_gamma))
    return total


def log_posterior(state, data, X, basis, variant="CS", hyper=None):
    """Unnormalized log-posterior kernel: counts + variances + prior."""
    variant = get_variant(variant)
    hyper = hyper if hyper is not None else Hyperparameters()
    cov = CovarianceModel(kind=variant.covariance_kind, basis=basis)
    Psi = basis.Psi
    means = latent_means(state, X, Psi, data)
    total = log_lik_counts(state, data, X, Psi, means=means)
    total += log_lik_variances(state, data, X, Psi, variant=variant, means=means)
    total += log_prior(state, hyper, cov)
    return total


def sample_data(state, data, X, Psi, rng, variant="CS"):
    """Draw replicate observations (counts, variances) from the data models.

    Returns stacked arrays aligned with ``data``'s observation order;
    variances are None under the VR variant.
    """
    variant = get_variant(variant)
    means = latent_means(state, X, Psi, data)
    counts = rng.poisson(means.mu_obs).astype(float)
    if not variant.variance_model:
        return counts, None
    eps = rng.standard_normal(data.n_obs) * np.sqrt(state.sigma2_eps)
    variances = np.exp(np.log(means.mu_obs) + eps)
    return counts, variances


def initial_state(data, X, basis, hyper=None, variant="CS"):
    """Deterministic starting point for the samplers.

    beta from least squares of log(Z1 + 0.5) on X; eta, xi zero;
    (a, b) = (0, 1); phi = sigma2 = 1.
    """
    hyper = hyper if hyper is not None else Hyperparameters()
    z1 = data.counts1
    target = np.log(z1 + 0.5)
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    return ModelState(
        beta=beta,
        eta=np.zeros(basis.r),
        xi=np.zeros(data.n1),
        a=0.0,
        b=1.0,
        phi=1.0,
        sigma2_eps=np.ones(data.n_obs),
        sigma2_gamma=1.0,
    )
