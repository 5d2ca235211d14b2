"""Convergence and adequacy diagnostics for a fitted model.

Fits two independent chains to the same synthetic survey, then reports
the estimated effective sample size and split-chain shrink factor for
the headline parameters, the Metropolis acceptance rates, and the
posterior predictive p-value (the fraction of posterior-replicate
datasets that look more extreme than the observed one; values near 0.5
indicate an adequate fit, values near 0 or 1 indicate misfit).

Run from the repository root after installing the package:

    python3 demos/04_diagnostics.py   (about half a minute)
"""

import numpy as np

from surveycos import (
    Hyperparameters,
    SamplerConfig,
    adjacency_from_boundaries,
    moran_basis,
    posterior_predictive_pvalue,
    run_chain,
    tile_support,
)
from surveycos.data import SurveyDataset, SurveyLevel

rng = np.random.default_rng(21)

source = tile_support((0.0, 0.0, 9.0, 9.0), 9, 9, level=1, prefix="tract")
n1 = len(source)
mu_true = np.exp(3.0 + 0.4 * rng.standard_normal(n1))
counts = rng.poisson(mu_true).astype(float)
variances = np.exp(np.log(mu_true) + rng.standard_normal(n1))
data = SurveyDataset([SurveyLevel(level=1, ids=source.ids,
                                  counts=counts, variances=variances)])

adjacency = adjacency_from_boundaries(source, rule="rook")
basis = moran_basis(adjacency, np.ones((n1, 1)), fraction=0.10)
hyper = Hyperparameters(mu_beta=3.0, sigma2_beta=1.0,
                        alpha_phi=2.5, omega_phi=2.0,
                        mu_Phi=(0.0, 1.0), sigma2_Phi=0.25,
                        alpha_eps=2.5, omega_eps=2.0,
                        alpha_gamma=2.5, omega_gamma=2.0)

# Two chains from dispersed starts; the shrink factor compares their
# within- and between-chain variability (values near 1 mean agreement).
config = SamplerConfig(iterations=3000, burn_in=1000, thin=2, seed=42, chains=2)
draws = run_chain(config, data, basis, cov="CS", hyper=hyper,
                  support_checksum=source.checksum)
print(f"retained draws: {draws.n_draws} (2 chains)")

print("\nmixing by parameter (effective draws / shrink factor):")
for name in ("beta_0", "phi", "sigma2_gamma", "a", "b"):
    ess = draws.meta["ess"].get(name)
    rhat = draws.meta["rhat"].get(name)
    if ess is not None:
        print(f"  {name:>12}: ESS {ess:7.0f}   split-chain shrink {rhat:.3f}")

print("\nMetropolis acceptance rates (adapted during burn-in):")
for block, phases in sorted(draws.meta["acceptance"].items()):
    rate = phases["sampling"]["rate"]
    print(f"  {block:>12}: {rate:.2f}")

p = posterior_predictive_pvalue(draws)
verdict = "adequate" if 0.05 < p < 0.95 else "poor"
print(f"\nposterior predictive p-value: {p:.3f} ({verdict} fit)")
