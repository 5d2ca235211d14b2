"""Shared fixtures: small grid geometries, synthetic surveys, short fits."""

import numpy as np
import pytest

from surveycos import (
    ArealSupport,
    CovariateMatrix,
    Hyperparameters,
    SamplerConfig,
    SurveyDataset,
    SurveyLevel,
    adjacency_from_boundaries,
    cos_weights,
    moran_basis,
    run_chain,
    tile_support,
)

MODERATE_HYPER = Hyperparameters(
    mu_beta=3.0,
    sigma2_beta=1.0,
    alpha_phi=2.5,
    omega_phi=2.0,
    mu_Phi=(0.0, 1.0),
    sigma2_Phi=0.25,
    alpha_eps=2.5,
    omega_eps=2.0,
    alpha_gamma=2.5,
    omega_gamma=2.0,
)


def square_grid(nx, ny, side=1.0, level=1, prefix="u"):
    """Axis-aligned nx-by-ny grid of unit squares starting at the origin."""
    return tile_support((0.0, 0.0, nx * side, ny * side), nx, ny, level=level, prefix=prefix)


def synthetic_survey(support, rng, mean_level=20.0, coarse=None, with_variances=True):
    """Draw a plausible survey: Poisson counts around ``mean_level`` and
    lognormal reported variances centred on the same means."""
    n = len(support)
    mu = mean_level * np.exp(0.3 * rng.standard_normal(n))
    counts = rng.poisson(mu).astype(float)
    levels = []
    var1 = None
    if with_variances:
        var1 = np.exp(np.log(mu) + 0.4 * rng.standard_normal(n))
    levels.append(SurveyLevel(level=1, ids=support.ids, counts=counts, variances=var1))
    if coarse is not None:
        w = cos_weights(support, coarse)
        mu_c = w.matrix @ mu
        counts_c = rng.poisson(mu_c).astype(float)
        var_c = None
        if with_variances:
            var_c = np.exp(np.log(mu_c) + 0.4 * rng.standard_normal(len(coarse)))
        levels.append(
            SurveyLevel(level=2, ids=coarse.ids, counts=counts_c, variances=var_c, weights=w)
        )
    return SurveyDataset(levels)


@pytest.fixture(scope="session")
def grid4():
    return square_grid(4, 4)


@pytest.fixture(scope="session")
def grid4_adjacency(grid4):
    return adjacency_from_boundaries(grid4)


@pytest.fixture(scope="session")
def grid4_basis(grid4, grid4_adjacency):
    X = CovariateMatrix.intercept(len(grid4))
    return moran_basis(grid4_adjacency, X, fraction=0.25)


@pytest.fixture(scope="session")
def grid4_dataset(grid4):
    rng = np.random.default_rng(1234)
    return synthetic_survey(grid4, rng)


@pytest.fixture(scope="session")
def grid4_fit(grid4, grid4_basis, grid4_dataset):
    """A short but real fit on the 4x4 grid, reused by read-only tests."""
    config = SamplerConfig(iterations=400, burn_in=150, seed=7)
    X = CovariateMatrix.intercept(len(grid4)).X
    return run_chain(
        config,
        grid4_dataset,
        grid4_basis,
        cov="CS",
        hyper=MODERATE_HYPER,
        X=X,
        support_checksum=grid4.checksum,
    )
