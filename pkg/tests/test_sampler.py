"""Metropolis-within-Gibbs machinery: conditionals, sweeps, full runs."""

import math
import warnings

import numpy as np
import pytest
from scipy import stats

from surveycos import (
    ConfigError,
    CovariateMatrix,
    DataError,
    GibbsSampler,
    SamplerConfig,
    gibbs_sweep,
    run_chain,
)
from surveycos.covariance import GapParams, k_matrix
from surveycos.errors import ConvergenceError
from surveycos.sampler import (
    invgamma_draw,
    mh_accept,
    phi_conditional,
    sigma2_eps_conditional,
    sigma2_gamma_conditional,
)

from conftest import MODERATE_HYPER, square_grid, synthetic_survey


@pytest.fixture(scope="module")
def small_problem(grid4, grid4_basis, grid4_dataset):
    X = CovariateMatrix.intercept(len(grid4)).X
    return grid4_dataset, X, grid4_basis


# -- acceptance rule -----------------------------------------------------------

def test_mh_accept_rules():
    assert mh_accept(0.0, 0.0, 0.0, 0.5)  # log u = -0.69 < 0
    assert not mh_accept(-10.0, 0.0, 0.0, 0.5)
    assert not mh_accept(-math.inf, 0.0, 0.0, 1e-300)  # -inf proposal always rejects
    assert mh_accept(-1.0, 0.0, 1.5, 0.99)  # proposal-ratio correction can rescue
    assert not mh_accept(0.0, 0.0, 0.0, 1.0)  # log u = 0 is not < 0


# -- conjugate conditionals ------------------------------------------------------

def test_sigma2_gamma_conditional_parameters():
    xi = np.array([1.0, -2.0, 0.5])
    shape, scale = sigma2_gamma_conditional(xi, MODERATE_HYPER)
    assert shape == pytest.approx(1.5 + MODERATE_HYPER.alpha_gamma, rel=1e-14)
    assert scale == pytest.approx(MODERATE_HYPER.omega_gamma + 0.5 * 5.25, rel=1e-14)


def test_sigma2_eps_conditional_parameters():
    log_s2 = np.array([1.0, 2.0])
    log_mu = np.array([0.5, 2.5])
    shape, scale = sigma2_eps_conditional(log_s2, log_mu, MODERATE_HYPER)
    assert shape == pytest.approx(0.5 + MODERATE_HYPER.alpha_eps, rel=1e-14)
    np.testing.assert_allclose(
        scale, MODERATE_HYPER.omega_eps + 0.5 * np.array([0.25, 0.25]), rtol=1e-14
    )


def test_phi_conditional_parameters(grid4_basis):
    rng = np.random.default_rng(0)
    eta = rng.standard_normal(grid4_basis.r)
    kmat = k_matrix(GapParams(a=0.2, b=0.9, phi=1.3), grid4_basis)
    shape, scale = phi_conditional(kmat, eta, MODERATE_HYPER)
    assert shape == pytest.approx(grid4_basis.r / 2.0 + MODERATE_HYPER.alpha_phi, rel=1e-14)
    # dense oracle: eta' (Phi diag(lam) Phi')^{-1} eta, phi factored out
    dense = (kmat.Phi * kmat.lam) @ kmat.Phi.T
    want = float(eta @ np.linalg.solve(dense, eta))
    assert scale == pytest.approx(MODERATE_HYPER.omega_phi + 0.5 * want, rel=1e-10)


def test_invgamma_draw_moments_match_scipy():
    rng = np.random.default_rng(1)
    alpha, omega = 6.0, 3.0
    n = 200_000
    samples = np.array([invgamma_draw(rng, alpha, omega) for _ in range(n)])
    dist = stats.invgamma(a=alpha, scale=omega)
    se_mean = dist.std() / math.sqrt(n)
    assert abs(samples.mean() - dist.mean()) < 4 * se_mean
    mu4 = dist.moment(4) - 4 * dist.mean() * dist.moment(3) + 6 * dist.mean() ** 2 * dist.moment(2) - 3 * dist.mean() ** 4
    se_var = math.sqrt((mu4 - dist.var() ** 2) / n)
    assert abs(samples.var(ddof=1) - dist.var()) < 4 * se_var


def test_invgamma_draw_vectorized_scale():
    rng = np.random.default_rng(2)
    omega = np.array([1.0, 2.0, 3.0])
    out = invgamma_draw(rng, 2.5, omega)
    assert out.shape == (3,)
    assert np.all(out > 0)


# -- sweeps -----------------------------------------------------------------------

def test_sweep_is_deterministic_given_rng(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="CS", hyper=MODERATE_HYPER)
    start = sampler.initial_state()
    s1 = sampler.sweep(start, np.random.default_rng(42))
    s2 = sampler.sweep(start, np.random.default_rng(42))
    np.testing.assert_array_equal(s1.beta, s2.beta)
    np.testing.assert_array_equal(s1.eta, s2.eta)
    np.testing.assert_array_equal(s1.xi, s2.xi)
    assert (s1.a, s1.b, s1.phi, s1.sigma2_gamma) == (s2.a, s2.b, s2.phi, s2.sigma2_gamma)


def test_sweep_respects_frozen_blocks(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="CS", hyper=MODERATE_HYPER)
    start = sampler.initial_state()
    out = sampler.sweep(start, np.random.default_rng(3), frozen={"eta", "beta", "xi", "ab"})
    np.testing.assert_array_equal(out.beta, start.beta)
    np.testing.assert_array_equal(out.eta, start.eta)
    np.testing.assert_array_equal(out.xi, start.xi)
    assert (out.a, out.b) == (start.a, start.b)
    # conjugate scalars still move
    assert out.phi != start.phi
    assert out.sigma2_gamma != start.sigma2_gamma


def test_sweep_keeps_state_valid(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="CS", hyper=MODERATE_HYPER)
    rng = np.random.default_rng(4)
    state = sampler.initial_state()
    for _ in range(50):
        state = sampler.sweep(state, rng)
    assert state.phi > 0 and state.sigma2_gamma > 0
    assert np.all(state.sigma2_eps > 0)
    assert np.isfinite(sampler.log_posterior(state))


def test_standalone_sweep_wrapper(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="CS", hyper=MODERATE_HYPER)
    start = sampler.initial_state()
    out = gibbs_sweep(start, data, basis, "CS", MODERATE_HYPER, np.random.default_rng(5), X=X)
    ref = sampler.sweep(start, np.random.default_rng(5))
    np.testing.assert_array_equal(out.eta, ref.eta)
    assert out.phi == ref.phi


def test_fixed_angle_variant_never_moves_ab(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="MI", hyper=MODERATE_HYPER)
    rng = np.random.default_rng(6)
    state = sampler.initial_state()
    for _ in range(10):
        state = sampler.sweep(state, rng)
    assert (state.a, state.b) == (0.0, 1.0)


def test_prior_only_sampler_has_no_data_terms(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(None, X, basis, variant="CS", hyper=MODERATE_HYPER)
    state = sampler.initial_state()
    from surveycos.model import log_prior

    assert sampler.log_posterior(state) == pytest.approx(
        log_prior(state, MODERATE_HYPER, sampler.cov), rel=1e-12
    )
    with pytest.raises(DataError):
        sampler.set_observations(np.ones(16))


def test_set_observations_swaps_data(small_problem):
    data, X, basis = small_problem
    sampler = GibbsSampler(data, X, basis, variant="CS", hyper=MODERATE_HYPER)
    state = sampler.initial_state()
    before = sampler.log_posterior(state)
    new_counts = data.counts_stacked + 5.0
    new_vars = data.variances_stacked * 1.1
    sampler.set_observations(new_counts, new_vars)
    after = sampler.log_posterior(state)
    assert before != after
    np.testing.assert_array_equal(sampler.data.counts_stacked, new_counts)


# -- full runs -----------------------------------------------------------------------

def test_run_chain_deterministic_and_shaped(small_problem):
    data, X, basis = small_problem
    config = SamplerConfig(iterations=120, burn_in=40, seed=11)
    d1 = run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)
    d2 = run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)
    assert d1.n_draws == 80
    assert d1.beta.shape == (80, 1)
    assert d1.eta.shape == (80, basis.r)
    assert d1.mu1.shape == (80, 16)
    assert np.all(d1.mu1 > 0)
    np.testing.assert_array_equal(d1.mu1, d2.mu1)
    np.testing.assert_array_equal(d1.ab, d2.ab)
    assert d1.meta["config_fingerprint"] == d2.meta["config_fingerprint"]
    d3 = run_chain(SamplerConfig(iterations=120, burn_in=40, seed=12), data, basis,
                   cov="CS", hyper=MODERATE_HYPER, X=X)
    assert not np.array_equal(d1.mu1, d3.mu1)


def test_run_chain_thinning_and_chains(small_problem):
    data, X, basis = small_problem
    config = SamplerConfig(iterations=100, burn_in=20, thin=4, chains=2, seed=13)
    d = run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)
    assert d.meta["draws_per_chain"] == 20
    assert d.n_draws == 40
    assert set(d.meta["rhat"]) >= {"beta_0", "phi", "sigma2_gamma", "a", "b"}
    assert all(v > 0 for v in d.meta["ess"].values())


def test_run_chain_meta_records_provenance(small_problem, grid4):
    data, X, basis = small_problem
    config = SamplerConfig(iterations=60, burn_in=20, seed=14)
    d = run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X,
                  support_checksum=grid4.checksum)
    assert d.meta["model_kind"] == "CS"
    assert d.meta["seed"] == 14
    assert d.meta["geometry_checksum"] == grid4.checksum
    assert d.meta["n1"] == 16 and d.meta["p"] == 1 and d.meta["r"] == basis.r
    ledger = d.meta["acceptance"]
    assert "beta" in ledger and "xi" in ledger and "ab" in ledger
    assert {"burnin", "sampling"} <= set(ledger["beta"])


def test_run_chain_acceptance_rates_near_targets(small_problem):
    data, X, basis = small_problem
    config = SamplerConfig(iterations=3000, burn_in=1500, seed=15)
    d = run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)
    ledger = d.meta["acceptance"]
    assert 0.2 <= ledger["xi"]["sampling"]["rate"] <= 0.7
    assert 0.1 <= ledger["beta"]["sampling"]["rate"] <= 0.75
    assert 0.05 <= ledger["eta_block_00"]["sampling"]["rate"] <= 0.6


def test_variance_free_variant_accepts_bare_counts(grid4, grid4_basis):
    rng = np.random.default_rng(7)
    bare = synthetic_survey(grid4, rng, with_variances=False)
    X = CovariateMatrix.intercept(16).X
    config = SamplerConfig(iterations=60, burn_in=20, seed=16)
    d = run_chain(config, bare, grid4_basis, cov="VR", hyper=MODERATE_HYPER, X=X)
    assert d.meta["model_kind"] == "VR"
    with pytest.raises(DataError):
        run_chain(config, bare, grid4_basis, cov="CS", hyper=MODERATE_HYPER, X=X)


def test_run_chain_convergence_gate(small_problem):
    data, X, basis = small_problem
    config = SamplerConfig(iterations=120, burn_in=40, seed=17, rhat_fail_threshold=0.9)
    with pytest.raises(ConvergenceError):
        run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)


def test_run_chain_warns_on_collapsed_acceptance(small_problem):
    data, X, basis = small_problem
    config = SamplerConfig(
        iterations=300, burn_in=100, seed=18, adapt=False, scale_xi=1e8
    )
    with pytest.warns(UserWarning, match="divergent"):
        run_chain(config, data, basis, cov="CS", hyper=MODERATE_HYPER, X=X)


def test_sampler_config_validation_collects_errors():
    with pytest.raises(ConfigError) as err:
        SamplerConfig(iterations=0, burn_in=5, thin=-1, chains=0, scale_eta=-1.0)
    msg = str(err.value)
    assert "iterations" in msg and "thin" in msg and "chains" in msg and "scale_eta" in msg
    with pytest.raises(ConfigError, match="divide"):
        SamplerConfig(iterations=100, burn_in=30, thin=3)
    with pytest.raises(ConfigError, match="frozen"):
        SamplerConfig(frozen_blocks={"gamma"})


def test_sampler_rejects_mismatched_shapes(grid4_basis):
    grid = square_grid(5, 5)
    rng = np.random.default_rng(8)
    wrong = synthetic_survey(grid, rng)
    X = CovariateMatrix.intercept(25).X
    with pytest.raises(DataError):
        GibbsSampler(wrong, X, grid4_basis)
    with pytest.raises(DataError):
        GibbsSampler(None, np.ones((7, 1)), grid4_basis)
