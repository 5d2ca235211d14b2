"""Metropolis-within-Gibbs sampler for the hierarchical model.

One sweep updates, in order: the basis coefficients eta (blockwise
Gaussian random walk), the regression coefficients beta (joint walk),
the fine-scale effects xi (single-site walks), the angle parameters
(a, b) (joint walk, covariance kinds that sample angles only), then
direct conjugate draws of phi, every sigma2_eps, and sigma2_gamma from
their inverse-gamma full conditionals.

Random-walk scales adapt during burn-in with a diminishing Robbins-Monro
schedule (targets 0.234 for multivariate blocks, 0.44 for scalar sites)
and are frozen afterwards so the post-burn-in kernel is a fixed-scale
Metropolis-within-Gibbs with the correct invariant distribution.

Everything is driven by a single ``numpy.random.Generator`` per chain,
so runs are bitwise reproducible for a fixed seed, config, and data.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceModel, KMatrix, floored_spectrum, phi_from_gap
from .errors import ConfigError, ConvergenceError, DataError, NonfiniteStateError
from .model import (
    OVERFLOW_GUARD,
    Hyperparameters,
    ModelState,
    get_variant,
    initial_state,
    latent_means,
    log_lik_counts,
    log_lik_variances,
    log_prior,
    normal_logpdf,
)

logger = logging.getLogger(__name__)

#: Post-burn-in acceptance below this triggers a divergence warning.
DIVERGENCE_RATE = 0.01


def mh_accept(log_post_new, log_post_old, log_q_ratio, u):
    """Standard Metropolis-Hastings acceptance decision.

    Accept iff log(u) < log_post_new - log_post_old + log_q_ratio.
    A proposal with -inf density always rejects; symmetric proposals
    pass ``log_q_ratio = 0``.
    """
    if log_post_new == -np.inf:
        return False
    return math.log(u) < (log_post_new - log_post_old + log_q_ratio)


def invgamma_draw(rng, alpha, omega):
    """Inverse-gamma draw(s) with shape ``alpha`` and scale ``omega``."""
    return omega / rng.gamma(alpha, size=np.shape(omega) if np.ndim(omega) else None)


def sigma2_gamma_conditional(xi, hyper):
    """(shape, scale) of the sigma2_gamma full conditional:
    IG(n1/2 + alpha_gamma, omega_gamma + sum(xi^2)/2)."""
    xi = np.asarray(xi, dtype=float)
    return xi.size / 2.0 + hyper.alpha_gamma, hyper.omega_gamma + 0.5 * float(xi @ xi)


def sigma2_eps_conditional(log_sigma2, log_mu, hyper):
    """(shape, scale) of each sigma2_eps full conditional:
    IG(1/2 + alpha_eps, omega_eps + (log sigma2 - log mu)^2 / 2)."""
    resid = np.asarray(log_sigma2, dtype=float) - np.asarray(log_mu, dtype=float)
    shape = 0.5 + hyper.alpha_eps
    scale = hyper.omega_eps + 0.5 * resid * resid
    return shape, scale


def phi_conditional(kmat, eta, hyper):
    """(shape, scale) of the phi full conditional:
    IG(r/2 + alpha_phi, omega_phi + eta' Phi diag(1/lam) Phi' eta / 2)."""
    return kmat.r / 2.0 + hyper.alpha_phi, hyper.omega_phi + 0.5 * kmat.precision_quad(eta)


@dataclass
class SamplerConfig:
    """Run-length, seeding, and proposal settings.

    ``iterations`` counts total sweeps; the first ``burn_in`` are
    discarded and every ``thin``-th of the rest is retained, so the
    number of retained draws per chain is (iterations - burn_in) / thin
    (which must divide evenly).
    """

    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 1
    chains: int = 1
    seed: int = 0
    scale_eta: float = 0.1
    scale_beta: float = 0.1
    scale_xi: float = 0.5
    scale_ab: float = 0.1
    eta_block_size: int = 25
    adapt_window: int = 50
    target_accept_block: float = 0.234
    target_accept_scalar: float = 0.44
    adapt: bool = True
    frozen_blocks: frozenset = frozenset()
    rhat_fail_threshold: float = None

    def __post_init__(self):
        errors = []
        if self.iterations <= 0:
            errors.append(f"iterations must be positive, got {self.iterations}")
        if not 0 <= self.burn_in < max(self.iterations, 1):
            errors.append(f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in}")
        if self.thin <= 0:
            errors.append(f"thin must be positive, got {self.thin}")
        elif (self.iterations - self.burn_in) % self.thin != 0:
            errors.append(
                f"thin ({self.thin}) must divide iterations - burn_in "
                f"({self.iterations - self.burn_in})"
            )
        if self.chains <= 0:
            errors.append(f"chains must be positive, got {self.chains}")
        for name in ("scale_eta", "scale_beta", "scale_xi", "scale_ab"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.eta_block_size <= 0:
            errors.append(f"eta_block_size must be positive, got {self.eta_block_size}")
        if self.adapt_window <= 0:
            errors.append(f"adapt_window must be positive, got {self.adapt_window}")
        for name in ("target_accept_block", "target_accept_scalar"):
            if not 0 < getattr(self, name) < 1:
                errors.append(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        unknown = set(self.frozen_blocks) - {"eta", "beta", "xi", "ab"}
        if unknown:
            errors.append(f"unknown frozen_blocks entries {sorted(unknown)}")
        if errors:
            raise ConfigError(errors)
        self.frozen_blocks = frozenset(self.frozen_blocks)

    @property
    def draws_per_chain(self):
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self):
        return {
            "iterations": self.iterations, "burn_in": self.burn_in, "thin": self.thin,
            "chains": self.chains, "seed": int(self.seed),
            "scale_eta": self.scale_eta, "scale_beta": self.scale_beta,
            "scale_xi": self.scale_xi, "scale_ab": self.scale_ab,
            "eta_block_size": self.eta_block_size, "adapt_window": self.adapt_window,
            "target_accept_block": self.target_accept_block,
            "target_accept_scalar": self.target_accept_scalar,
            "adapt": self.adapt, "frozen_blocks": sorted(self.frozen_blocks),
            "rhat_fail_threshold": self.rhat_fail_threshold,
        }


class _AdaptiveScale:
    """Diminishing Robbins-Monro step-size adaptation for one block."""

    def __init__(self, scale, target, window):
        self.log_scale = math.log(scale)
        self.target = target
        self.window = window
        self.frozen = False
        self._proposed = 0
        self._accepted = 0
        self._rounds = 0

    @property
    def scale(self):
        return math.exp(self.log_scale)

    def record(self, proposed, accepted):
        self.total_proposed = getattr(self, "total_proposed", 0) + proposed
        self.total_accepted = getattr(self, "total_accepted", 0) + accepted
        if self.frozen:
            return
        self._proposed += proposed
        self._accepted += accepted
        if self._proposed >= self.window:
            rate = self._accepted / self._proposed
            self._rounds += 1
            step = min(0.5, 2.0 / math.sqrt(self._rounds))
            self.log_scale += step * (rate - self.target)
            self.log_scale = min(max(self.log_scale, -20.0), 20.0)
            self._proposed = 0
            self._accepted = 0


class _BlockLedger:
    """Counts proposals/acceptances per block, split by burn-in phase."""

    def __init__(self):
        self.counts = {}

    def record(self, name, proposed, accepted, warmup):
        key = "burnin" if warmup else "sampling"
        slot = self.counts.setdefault(name, {"burnin": [0, 0], "sampling": [0, 0]})
        slot[key][0] += proposed
        slot[key][1] += accepted

    def summary(self):
        out = {}
        for name, slot in self.counts.items():
            entry = {}
            for phase, (prop, acc) in slot.items():
                entry[phase] = {
                    "proposed": prop,
                    "accepted": acc,
                    "rate": (acc / prop) if prop else None,
                }
            out[name] = entry
        return out


class GibbsSampler:
    """A bound sampler: data, design, basis, variant, and hyperparameters.

    ``data=None`` switches every likelihood term off so repeated sweeps
    sample the prior (useful for validation).  The observed data can be
    swapped with ``set_observations`` without rebuilding caches, which is
    what simulation-based calibration checks need.
    """

    def __init__(self, data, X, basis, variant="CS", hyper=None, prior_only=False):
        self.variant = get_variant(variant)
        self.basis = basis
        self.cov = CovarianceModel(kind=self.variant.covariance_kind, basis=basis)
        self.hyper = hyper if hyper is not None else Hyperparameters()
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.Psi = basis.Psi
        self.n1 = basis.n1
        self.p = self.X.shape[1]
        self.r = basis.r
        if self.X.shape[0] != self.n1:
            raise DataError("design matrix rows do not match the basis dimension")
        self.lam = floored_spectrum(basis)
        self.prior_only = data is None or prior_only
        self.data = data
        if data is not None:
            if data.n1 != self.n1:
                raise DataError("dataset level-1 size does not match the basis dimension")
            self.n_obs = data.n_obs
            self._load_observations(data)
            if self.variant.variance_model and not data.has_variances:
                raise DataError(
                    f"model kind {self.variant.name!r} requires reported sampling variances"
                )
        else:
            self.n_obs = self.n1
            self.W = np.zeros((0, self.n1))
            self.z_stacked = None
            self.log_s2 = None
            self.var_mask = np.zeros(self.n1, dtype=bool)
            self._site_coarse = None
        self.mu_beta = self.hyper.mu_beta_vector(self.p)

    # -- data plumbing -----------------------------------------------------
    def _load_observations(self, data):
        self.W = data.coarse_weights
        self.z_stacked = data.counts_stacked
        self.z1 = self.z_stacked[: self.n1]
        self.z_coarse = self.z_stacked[self.n1:]
        use_var = self.variant.variance_model and data.has_variances
        if use_var:
            v = data.variances_stacked
            self.var_mask = data.variance_mask()
            with np.errstate(divide="ignore"):
                self.log_s2 = np.where(self.var_mask, np.log(np.where(self.var_mask, v, 1.0)), 0.0)
        else:
            self.var_mask = np.zeros(data.n_obs, dtype=bool)
            self.log_s2 = np.zeros(data.n_obs)
        # per-site lists of (coarse-row indices, weights) for xi updates
        if self.W.shape[0]:
            self._site_coarse = []
            for i in range(self.n1):
                rows = np.flatnonzero(self.W[:, i] > 0)
                self._site_coarse.append((rows, self.W[rows, i]))
        else:
            self._site_coarse = None

    def set_observations(self, counts_stacked, variances_stacked=None):
        """Swap the observed data in place (same supports and shapes)."""
        if self.data is None:
            raise DataError("cannot set observations on a prior-only sampler")
        self.data = self.data.replace_observations(counts_stacked, variances_stacked)
        self._load_observations(self.data)

    # -- density pieces ----------------------------------------------------
    def _count_ll(self, Y1, mu1, mu_c):
        if self.prior_only:
            return 0.0
        total = float(self.z1 @ Y1 - np.sum(mu1))
        if mu_c.size:
            total += float(self.z_coarse @ np.log(mu_c) - np.sum(mu_c))
        return total

    def _var_ll(self, Y1, mu_c, sigma2_eps):
        if self.prior_only or not self.var_mask.any():
            return 0.0
        log_mu = np.concatenate([Y1, np.log(mu_c)]) if mu_c.size else Y1
        m = self.var_mask
        return float(np.sum(normal_logpdf(self.log_s2[m], log_mu[m], sigma2_eps[m])))

    def log_posterior(self, state):
        """Full log-posterior kernel at a state (fresh recompute)."""
        if self.prior_only:
            return log_prior(state, self.hyper, self.cov)
        total = log_lik_counts(state, self.data, self.X, self.Psi)
        total += log_lik_variances(state, self.data, self.X, self.Psi, variant=self.variant)
        total += log_prior(state, self.hyper, self.cov)
        return total

    def initial_state(self):
        if self.prior_only:
            return ModelState(
                beta=self.mu_beta.copy(), eta=np.zeros(self.r), xi=np.zeros(self.n1),
                a=self.hyper.mu_Phi[0], b=self.hyper.mu_Phi[1], phi=1.0,
                sigma2_eps=np.ones(self.n_obs), sigma2_gamma=1.0,
            )
        return initial_state(self.data, self.X, self.basis, self.hyper, self.variant)

    def _eta_blocks(self, block_size):
        return [np.arange(s, min(s + block_size, self.r)) for s in range(0, self.r, block_size)]

    def _kmatrix(self, state):
        Phi = phi_from_gap(state.a, state.b, self.basis) if self.cov.samples_angles else self.basis.PhiQ
        return KMatrix(Phi, self.lam, state.phi)

    # -- the sweep ---------------------------------------------------------
    def sweep(self, state, rng, scales=None, ledger=None, warmup=False,
              eta_block_size=25, frozen=frozenset()):
        """One full Metropolis-within-Gibbs sweep; returns the new state.

        ``scales`` maps block names ("eta_block_00", "beta", "xi", "ab")
        to step sizes or adaptive-scale objects; missing entries fall
        back to fixed defaults.  Nonfinite proposals reject, never crash.
        """
        beta = state.beta.copy()
        eta = state.eta.copy()
        xi = state.xi.copy()
        a, b, phi = state.a, state.b, state.phi
        sigma2_eps = state.sigma2_eps.copy()
        sigma2_gamma = state.sigma2_gamma

        kmat = self._kmatrix(state)
        Xbeta = self.X @ beta
        Psieta = self.Psi @ eta
        Y1 = Xbeta + Psieta + xi
        if np.max(np.abs(Y1)) > OVERFLOW_GUARD:
            raise NonfiniteStateError("incoming state violates the overflow guard")
        mu1 = np.exp(Y1)
        mu_c = self.W @ mu1 if self.W.shape[0] else np.zeros(0)
        ll_counts = self._count_ll(Y1, mu1, mu_c)
        ll_vars = self._var_ll(Y1, mu_c, sigma2_eps)
        quad_prec = kmat.precision_quad(eta)

        def get_scale(name, default):
            obj = (scales or {}).get(name)
            if obj is None:
                return default, None
            if isinstance(obj, _AdaptiveScale):
                return obj.scale, obj
            return float(obj), None

        def record(name, adaptor, proposed, accepted):
            if adaptor is not None:
                adaptor.record(proposed, accepted)
            if ledger is not None:
                ledger.record(name, proposed, accepted, warmup)

        # 1) eta blocks
        if "eta" not in frozen:
            for bi, block in enumerate(self._eta_blocks(eta_block_size)):
                name = f"eta_block_{bi:02d}"
                scale, adaptor = get_scale(name, 0.1)
                step = scale * rng.standard_normal(block.size)
                u = rng.uniform()
                eta_new = eta.copy()
                eta_new[block] += step
                Psieta_new = Psieta + self.Psi[:, block] @ step
                Y1_new = Xbeta + Psieta_new + xi
                accepted = False
                if np.max(np.abs(Y1_new)) <= OVERFLOW_GUARD:
                    mu1_new = np.exp(Y1_new)
                    mu_c_new = self.W @ mu1_new if self.W.shape[0] else mu_c
                    ll_counts_new = self._count_ll(Y1_new, mu1_new, mu_c_new)
                    ll_vars_new = self._var_ll(Y1_new, mu_c_new, sigma2_eps)
                    quad_new = kmat.precision_quad(eta_new)
                    delta = (ll_counts_new + ll_vars_new) - (ll_counts + ll_vars)
                    delta += -0.5 * (quad_new - quad_prec) / phi
                    if mh_accept(delta, 0.0, 0.0, u):
                        accepted = True
                        eta, Psieta, Y1, mu1, mu_c = eta_new, Psieta_new, Y1_new, mu1_new, mu_c_new
                        ll_counts, ll_vars, quad_prec = ll_counts_new, ll_vars_new, quad_new
                record(name, adaptor, 1, int(accepted))

        # 2) beta
        if "beta" not in frozen:
            scale, adaptor = get_scale("beta", 0.1)
            step = scale * rng.standard_normal(self.p)
            u = rng.uniform()
            beta_new = beta + step
            Xbeta_new = Xbeta + self.X @ step
            Y1_new = Xbeta_new + Psieta + xi
            accepted = False
            if np.max(np.abs(Y1_new)) <= OVERFLOW_GUARD:
                mu1_new = np.exp(Y1_new)
                mu_c_new = self.W @ mu1_new if self.W.shape[0] else mu_c
                ll_counts_new = self._count_ll(Y1_new, mu1_new, mu_c_new)
                ll_vars_new = self._var_ll(Y1_new, mu_c_new, sigma2_eps)
                prior_delta = float(
                    np.sum(normal_logpdf(beta_new, self.mu_beta, self.hyper.sigma2_beta))
                    - np.sum(normal_logpdf(beta, self.mu_beta, self.hyper.sigma2_beta))
                )
                delta = (ll_counts_new + ll_vars_new) - (ll_counts + ll_vars) + prior_delta
                if mh_accept(delta, 0.0, 0.0, u):
                    accepted = True
                    beta, Xbeta, Y1, mu1, mu_c = beta_new, Xbeta_new, Y1_new, mu1_new, mu_c_new
                    ll_counts, ll_vars = ll_counts_new, ll_vars_new
            record("beta", adaptor, 1, int(accepted))

        # 3) xi single-site
        if "xi" not in frozen:
            scale, adaptor = get_scale("xi", 0.5)
            steps = scale * rng.standard_normal(self.n1)
            us = rng.uniform(size=self.n1)
            if self._site_coarse is None:
                # no coarse observations: sites are conditionally independent
                Y1_new = Y1 + steps
                ok = np.abs(Y1_new) <= OVERFLOW_GUARD
                mu1_new = np.exp(np.where(ok, Y1_new, Y1))
                delta = np.full(self.n1, -np.inf)
                if self.prior_only:
                    delta[ok] = 0.0
                else:
                    delta[ok] = (self.z1 * (Y1_new - Y1) - (mu1_new - mu1))[ok]
                    m1 = self.var_mask[: self.n1]
                    both = ok & m1
                    if np.any(both):
                        delta[both] += (
                            normal_logpdf(self.log_s2[: self.n1][both], Y1_new[both], sigma2_eps[: self.n1][both])
                            - normal_logpdf(self.log_s2[: self.n1][both], Y1[both], sigma2_eps[: self.n1][both])
                        )
                xi_new_all = xi + steps
                delta += -0.5 * (xi_new_all ** 2 - xi ** 2) / sigma2_gamma
                accept = np.log(us) < delta
                n_acc = int(accept.sum())
                if n_acc:
                    xi = np.where(accept, xi_new_all, xi)
                    Y1 = np.where(accept, Y1_new, Y1)
                    mu1 = np.where(accept, mu1_new, mu1)
                    ll_counts = self._count_ll(Y1, mu1, mu_c)
                    ll_vars = self._var_ll(Y1, mu_c, sigma2_eps)
            else:
                n_acc = 0
                m1 = self.var_mask[: self.n1]
                mc_mask = self.var_mask[self.n1:]
                for i in range(self.n1):
                    y_new = Y1[i] + steps[i]
                    if abs(y_new) > OVERFLOW_GUARD:
                        continue
                    mu_new_i = math.exp(y_new)
                    d_mu = mu_new_i - mu1[i]
                    rows, wts = self._site_coarse[i]
                    mu_c_rows_new = mu_c[rows] + wts * d_mu
                    if np.any(mu_c_rows_new <= 0):
                        continue
                    delta = self.z1[i] * steps[i] - d_mu
                    if rows.size:
                        delta += float(
                            self.z_coarse[rows] @ (np.log(mu_c_rows_new) - np.log(mu_c[rows]))
                            - np.sum(mu_c_rows_new - mu_c[rows])
                        )
                    if m1[i]:
                        delta += float(
                            normal_logpdf(self.log_s2[i], y_new, sigma2_eps[i])
                            - normal_logpdf(self.log_s2[i], Y1[i], sigma2_eps[i])
                        )
                    if rows.size and mc_mask[rows].any():
                        sub = rows[mc_mask[rows]]
                        sub_new = mu_c[sub] + self.W[sub, i] * d_mu
                        delta += float(
                            np.sum(normal_logpdf(self.log_s2[self.n1:][sub], np.log(sub_new), sigma2_eps[self.n1:][sub]))
                            - np.sum(normal_logpdf(self.log_s2[self.n1:][sub], np.log(mu_c[sub]), sigma2_eps[self.n1:][sub]))
                        )
                    xi_new = xi[i] + steps[i]
                    delta += -0.5 * (xi_new ** 2 - xi[i] ** 2) / sigma2_gamma
                    if mh_accept(delta, 0.0, 0.0, us[i]):
                        xi[i] = xi_new
                        Y1[i] = y_new
                        mu1[i] = mu_new_i
                        mu_c[rows] = mu_c_rows_new
                        n_acc += 1
                ll_counts = self._count_ll(Y1, mu1, mu_c)
                ll_vars = self._var_ll(Y1, mu_c, sigma2_eps)
            record("xi", adaptor, self.n1, n_acc)

        # 4) (a, b) joint walk (angle-sampling covariances only)
        if self.cov.samples_angles and "ab" not in frozen:
            scale, adaptor = get_scale("ab", 0.1)
            step = scale * rng.standard_normal(2)
            u = rng.uniform()
            a_new, b_new = a + step[0], b + step[1]
            kmat_new = KMatrix(phi_from_gap(a_new, b_new, self.basis), self.lam, phi)
            quad_new = kmat_new.precision_quad(eta)
            delta = -0.5 * (quad_new - quad_prec) / phi
            delta += float(
                normal_logpdf(a_new, self.hyper.mu_Phi[0], self.hyper.sigma2_Phi)
                - normal_logpdf(a, self.hyper.mu_Phi[0], self.hyper.sigma2_Phi)
                + normal_logpdf(b_new, self.hyper.mu_Phi[1], self.hyper.sigma2_Phi)
                - normal_logpdf(b, self.hyper.mu_Phi[1], self.hyper.sigma2_Phi)
            )
            accepted = mh_accept(delta, 0.0, 0.0, u)
            if accepted:
                a, b, kmat, quad_prec = a_new, b_new, kmat_new, quad_new
            record("ab", adaptor, 1, int(accepted))

        # 5) phi ~ IG(r/2 + alpha_phi, omega_phi + quad/2)
        shape = self.r / 2.0 + self.hyper.alpha_phi
        scale_ig = self.hyper.omega_phi + 0.5 * quad_prec
        phi = float(invgamma_draw(rng, shape, scale_ig))

        # 6) each sigma2_eps
        shape_e = 0.5 + self.hyper.alpha_eps
        scales_e = np.full(self.n_obs, self.hyper.omega_eps)
        shapes_e = np.full(self.n_obs, self.hyper.alpha_eps)
        if self.var_mask.any():
            log_mu = np.concatenate([Y1, np.log(mu_c)]) if mu_c.size else Y1
            resid = self.log_s2[self.var_mask] - log_mu[self.var_mask]
            shapes_e[self.var_mask] = shape_e
            scales_e[self.var_mask] = self.hyper.omega_eps + 0.5 * resid * resid
        sigma2_eps = invgamma_draw(rng, shapes_e, scales_e)

        # 7) sigma2_gamma ~ IG(n1/2 + alpha_gamma, omega_gamma + sum xi^2 / 2)
        shape_g, scale_g = sigma2_gamma_conditional(xi, self.hyper)
        sigma2_gamma = float(invgamma_draw(rng, shape_g, scale_g))

        return ModelState(beta=beta, eta=eta, xi=xi, a=a, b=b, phi=phi,
                          sigma2_eps=sigma2_eps, sigma2_gamma=sigma2_gamma)

    # -- full runs -----------------------------------------------------------
    def run(self, config):
        """Run ``config.chains`` chains; returns merged draw arrays and
        bookkeeping (see ``run_chain`` for the public entry point)."""
        from .draws import PosteriorDraws  # local import; draws depends on sampler types

        K = config.draws_per_chain
        seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
        all_arrays = []
        ledger = _BlockLedger()
        final_scales = {}
        for chain_idx in range(config.chains):
            rng = np.random.default_rng(seeds[chain_idx])
            scales = self._make_scales(config)
            state = self.initial_state()
            arrays = {
                "beta": np.empty((K, self.p)), "eta": np.empty((K, self.r)),
                "xi": np.empty((K, self.n1)), "ab": np.empty((K, 2)),
                "phi": np.empty(K), "sigma2_eps": np.empty((K, self.n_obs)),
                "sigma2_gamma": np.empty(K), "mu1": np.empty((K, self.n1)),
            }
            kept = 0
            for it in range(config.iterations):
                warmup = it < config.burn_in
                state = self.sweep(
                    state, rng, scales=scales, ledger=ledger, warmup=warmup,
                    eta_block_size=config.eta_block_size, frozen=config.frozen_blocks,
                )
                if warmup:
                    if it == config.burn_in - 1:
                        for adaptor in scales.values():
                            adaptor.frozen = True
                    continue
                if (it - config.burn_in) % config.thin == config.thin - 1:
                    arrays["beta"][kept] = state.beta
                    arrays["eta"][kept] = state.eta
                    arrays["xi"][kept] = state.xi
                    arrays["ab"][kept] = (state.a, state.b)
                    arrays["phi"][kept] = state.phi
                    arrays["sigma2_eps"][kept] = state.sigma2_eps
                    arrays["sigma2_gamma"][kept] = state.sigma2_gamma
                    means = latent_means(state, self.X, self.Psi,
                                         self.data if not self.prior_only else None)
                    arrays["mu1"][kept] = means.mu1
                    kept += 1
            all_arrays.append(arrays)
            final_scales[f"chain_{chain_idx}"] = {
                name: adaptor.scale for name, adaptor in scales.items()
            }
        merged = {
            name: np.concatenate([a[name] for a in all_arrays], axis=0)
            for name in all_arrays[0]
        }
        return merged, ledger.summary(), final_scales

    def _make_scales(self, config):
        scales = {}
        window = config.adapt_window
        blocks = self._eta_blocks(config.eta_block_size)
        for bi, block in enumerate(blocks):
            target = (config.target_accept_block if block.size > 1
                      else config.target_accept_scalar)
            scales[f"eta_block_{bi:02d}"] = _AdaptiveScale(config.scale_eta, target, window)
        scales["beta"] = _AdaptiveScale(
            config.scale_beta,
            config.target_accept_block if self.p > 1 else config.target_accept_scalar,
            window,
        )
        scales["xi"] = _AdaptiveScale(
            config.scale_xi, config.target_accept_scalar, max(window, self.n1)
        )
        if self.cov.samples_angles:
            scales["ab"] = _AdaptiveScale(config.scale_ab, config.target_accept_block, window)
        if not config.adapt:
            for adaptor in scales.values():
                adaptor.frozen = True
        return scales


def gibbs_sweep(state, data, basis, cov, hyper, rng, X=None, scales=None):
    """One sweep of the Metropolis-within-Gibbs kernel (one-shot form).

    ``cov`` may be a CovarianceModel or a variant name ("CS", "VR",
    "MI"); ``data=None`` runs the sweep against the prior only.  ``X``
    defaults to an intercept-only design.  For long runs prefer
    ``run_chain``/``GibbsSampler``, which reuse cached structures.
    """
    variant = _variant_from_cov(cov)
    if X is None:
        X = np.ones((basis.n1, 1))
    sampler = GibbsSampler(data, X, basis, variant=variant, hyper=hyper)
    return sampler.sweep(state, rng, scales=scales)


def _variant_from_cov(cov):
    if isinstance(cov, CovarianceModel):
        return "MI" if cov.kind == "MI" else "CS"
    return cov


def run_chain(config, data, basis, cov="CS", hyper=None, X=None, support_checksum=None):
    """Run the sampler and package the result.

    Parameters
    ----------
    config : SamplerConfig
    data : SurveyDataset
    basis : MoranBasis
    cov : str or CovarianceModel
        Model variant: "CS" (full), "VR" (no variance model), "MI"
        (fixed angles) — or an explicit covariance model.
    hyper : Hyperparameters, optional
    X : ndarray, optional
        Level-1 design matrix; defaults to intercept-only.
    support_checksum : str, optional
        Geometry checksum of the level-1 support, recorded in the draws
        so downstream change-of-support can verify alignment.

    Returns
    -------
    PosteriorDraws
        Deterministic given the seed: identical configs and seeds give
        bitwise-identical draw streams.
    """
    from .draws import PosteriorDraws
    from .io import fingerprint

    variant = get_variant(_variant_from_cov(cov))
    hyper = hyper if hyper is not None else Hyperparameters()
    if X is None:
        X = np.ones((basis.n1, 1))
    sampler = GibbsSampler(data, X, basis, variant=variant, hyper=hyper)
    merged, acceptance, final_scales = sampler.run(config)

    for name, entry in acceptance.items():
        stats = entry.get("sampling")
        if stats and stats["proposed"] and stats["rate"] < DIVERGENCE_RATE:
            warnings.warn(
                f"block {name!r} acceptance rate {stats['rate']:.4f} below "
                f"{DIVERGENCE_RATE} after burn-in; the chain may be divergent",
                UserWarning,
                stacklevel=2,
            )

    from .diagnostics import summarize_chains

    K = config.draws_per_chain
    named = {}
    for j in range(sampler.p):
        named[f"beta_{j}"] = merged["beta"][:, j].reshape(config.chains, K)
    for j in range(min(sampler.r, 10)):
        named[f"eta_{j}"] = merged["eta"][:, j].reshape(config.chains, K)
    if sampler.cov.samples_angles:
        named["a"] = merged["ab"][:, 0].reshape(config.chains, K)
        named["b"] = merged["ab"][:, 1].reshape(config.chains, K)
    named["phi"] = merged["phi"].reshape(config.chains, K)
    named["sigma2_gamma"] = merged["sigma2_gamma"].reshape(config.chains, K)
    mixing = summarize_chains(named)

    if config.rhat_fail_threshold is not None:
        worst = max(v for v in mixing["rhat"].values() if np.isfinite(v))
        if worst > config.rhat_fail_threshold:
            offenders = {k: round(v, 4) for k, v in mixing["rhat"].items()
                         if np.isfinite(v) and v > config.rhat_fail_threshold}
            raise ConvergenceError(
                f"split-R-hat exceeds {config.rhat_fail_threshold}: {offenders}"
            )

    config_fingerprint = fingerprint({
        "sampler": config.to_dict(),
        "variant": variant.name,
        "hyper": {
            "mu_beta": hyper.mu_beta, "sigma2_beta": hyper.sigma2_beta,
            "alpha_phi": hyper.alpha_phi, "omega_phi": hyper.omega_phi,
            "mu_Phi": hyper.mu_Phi, "sigma2_Phi": hyper.sigma2_Phi,
            "alpha_eps": hyper.alpha_eps, "omega_eps": hyper.omega_eps,
            "alpha_gamma": hyper.alpha_gamma, "omega_gamma": hyper.omega_gamma,
        },
        "n1": sampler.n1, "r": sampler.r, "p": sampler.p,
    })
    meta = {
        "n1": sampler.n1, "r": sampler.r, "p": sampler.p,
        "K": int(merged["phi"].size), "n_obs": sampler.n_obs,
        "chains": config.chains, "draws_per_chain": K,
        "seed": int(config.seed), "model_kind": variant.name,
        "config": config.to_dict(),
        "config_fingerprint": config_fingerprint,
        "geometry_checksum": support_checksum,
        "acceptance": acceptance, "final_scales": final_scales,
        "ess": mixing["ess"], "rhat": mixing["rhat"],
        "hyper": {
            "mu_beta": hyper.mu_beta.tolist(), "sigma2_beta": hyper.sigma2_beta,
            "alpha_phi": hyper.alpha_phi, "omega_phi": hyper.omega_phi,
            "mu_Phi": list(hyper.mu_Phi), "sigma2_Phi": hyper.sigma2_Phi,
            "alpha_eps": hyper.alpha_eps, "omega_eps": hyper.omega_eps,
            "alpha_gamma": hyper.alpha_gamma, "omega_gamma": hyper.omega_gamma,
        },
    }
    return PosteriorDraws(
        beta=merged["beta"], eta=merged["eta"], xi=merged["xi"], ab=merged["ab"],
        phi=merged["phi"], sigma2_eps=merged["sigma2_eps"],
        sigma2_gamma=merged["sigma2_gamma"], mu1=merged["mu1"], meta=meta,
        basis=basis, dataset=data, X=sampler.X,
    )
