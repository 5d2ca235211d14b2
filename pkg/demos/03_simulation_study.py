"""A reduced run of the built-in simulation study.

The study machinery draws one pseudo-population of individuals, repeats a
stratified random sample of it, fits the full model plus two ablations
(variance model removed, rotation fixed) to every replicate, and scores
everything on a misaligned target support against the population truth.
The headline score is the paired accuracy difference PAD(comparator):
mean absolute error of the comparator minus that of the full model on the
same replicate, so positive values favour the full model.

This demo shrinks the run (3 replicates, short chains) so it finishes in
about a minute; the full-scale version (10 replicates, 5000 iterations)
runs inside the acceptance test suite and via the command line:

    surveycos simulate --config <study.json> --output <dir>

Run from the repository root after installing the package:

    python3 demos/03_simulation_study.py
"""

import numpy as np

from surveycos import StudyConfig, run_study

config = StudyConfig(replicates=3, iterations=1200, burn_in=400, seed=10)
design = config.design
print(f"population: {design.grid_nx}x{design.grid_ny} source grid, "
      f"{design.n_hotspots} hot spots, "
      f"{len(design.strata)} strata x {design.sample_per_stratum} sampled")
print(f"replicates: {config.replicates}, chains {config.iterations} iterations "
      f"({config.burn_in} burn-in)\n")

result = run_study(config)

print("paired accuracy differences (positive favours the full model):")
for comparator in result.comparators:
    pads = np.asarray(result.pads[comparator])
    test = result.sign_tests[comparator]
    label = {"SI": "area-proportional reallocation",
             "VR": "variance model removed",
             "MI": "rotation fixed at reference"}[comparator]
    print(f"  vs {comparator} ({label}):")
    print(f"     PAD per replicate: {np.array2string(pads, precision=2)}")
    print(f"     positive in {test['n_positive']}/{test['n']} replicates, "
          f"sign-test p = {test['p_value']:.3f}")

print(f"\npooled 90% intervals cover the truth in "
      f"{int(result.pooled_covered.sum())}/{result.pooled_covered.size} "
      f"target units")
print(f"median fit time per replicate: "
      f"{np.median(np.concatenate([np.atleast_1d(v) for v in result.mcmc_seconds.values()])):.1f}s; "
      f"median change-of-support time: {np.median(result.cos_seconds)*1000:.0f} ms")
