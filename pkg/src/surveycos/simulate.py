"""Pseudo-population generator, stratified survey estimates, and the
replicate comparison study.

The generator lays a coarse grid over a square domain, picks a few
hot-spot cells that receive a dense disc of points, fills the rest
uniformly, and attaches independent Bernoulli outcomes.  A stratified
simple random sample per stratum produces the design-based estimates

    Z_i = (N_i / n) * sum of sampled outcomes,
    sigma2_i = (1 - n / N_i) * N_i^2 * phat (1 - phat) / (n - 1),

which form the survey dataset handed to the model; exact point-in-
polygon sums of the outcomes give the ground truth on any support.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import shapely

from .basis import CovariateMatrix, moran_basis
from .data import SurveyDataset, SurveyLevel
from .errors import ConfigError, DataError
from .geometry import (
    TARGET_LEVEL,
    ArealSupport,
    ArealUnit,
    adjacency_from_boundaries,
    cos_weights,
)
from .inference import cos_posterior, pad, simple_areal_interpolation
from .model import Hyperparameters
from .sampler import SamplerConfig, run_chain

logger = logging.getLogger(__name__)


def tile_support(bounds, nx, ny, level=1, prefix="s"):
    """Rectangular nx-by-ny tiling of a bounding box as an ArealSupport."""
    xmin, ymin, xmax, ymax = bounds
    dx = (xmax - xmin) / nx
    dy = (ymax - ymin) / ny
    units = []
    for iy in range(ny):
        for ix in range(nx):
            units.append(ArealUnit.rectangle(
                f"{prefix}{iy * nx + ix:03d}",
                xmin + ix * dx, ymin + iy * dy,
                xmin + (ix + 1) * dx, ymin + (iy + 1) * dy,
            ))
    return ArealSupport(level=level, units=units, validate=False)


def default_strata(bounds=(1.0, 1.0, 12.0, 12.0)):
    """The default 90-stratum layout: a 9 x 10 tiling of the domain."""
    return tile_support(bounds, nx=9, ny=10, level=1, prefix="s")


def default_targets(bounds=(1.0, 1.0, 12.0, 12.0), n=6):
    """The default 6 x 6 target grid, inset by half a target cell so every
    target unit straddles several strata (a genuine change of support)."""
    xmin, ymin, xmax, ymax = bounds
    half_dx = (xmax - xmin) / n / 2.0
    half_dy = (ymax - ymin) / n / 2.0
    inset = (xmin + half_dx, ymin + half_dy, xmax - half_dx, ymax - half_dy)
    return tile_support(inset, nx=n, ny=n, level=TARGET_LEVEL, prefix="t")


@dataclass(frozen=True, eq=False)
class SimulationDesign:
    """Settings of the pseudo-population generator.

    The defaults describe a 12x12 square region divided into a 6x6 grid,
    three hot-spot cells whose points concentrate in radius-2 discs, and
    a 90-stratum sampling frame with 50 draws per stratum.
    """

    bounds: tuple = (1.0, 1.0, 12.0, 12.0)
    grid_nx: int = 6
    grid_ny: int = 6
    n_hotspots: int = 3
    points_per_hotspot: int = 5000
    points_per_cell: int = 1000
    hotspot_radius: float = 2.0
    outcome_prob: float = 0.5
    strata: ArealSupport = None
    sample_per_stratum: int = 50

    def __post_init__(self):
        if not 0.0 <= self.outcome_prob <= 1.0:
            raise DataError(f"outcome_prob must lie in [0, 1], got {self.outcome_prob}")
        if self.n_hotspots < 0 or self.n_hotspots > self.grid_nx * self.grid_ny:
            raise DataError("n_hotspots must fit within the generation grid")
        if min(self.points_per_cell, self.points_per_hotspot) < 0:
            raise DataError("point counts must be nonnegative")
        if self.sample_per_stratum <= 1:
            raise DataError("sample_per_stratum must exceed 1 (variance needs n > 1)")
        if self.strata is None:
            object.__setattr__(self, "strata", default_strata(self.bounds))


@dataclass(frozen=True, eq=False)
class PseudoPopulation:
    """A realized pseudo-household population.

    ``assignments`` maps each point to a stratum index (-1 when the point
    falls outside every stratum, which can happen when a hot-spot disc
    pokes past the domain edge); ``strata_totals`` counts assigned points
    per stratum, so ``strata_totals.sum() + n_outside == len(points)``.
    """

    points: np.ndarray
    outcomes: np.ndarray
    strata: ArealSupport
    assignments: np.ndarray
    strata_totals: np.ndarray
    n_outside: int

    @property
    def size(self):
        return int(self.points.shape[0])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "outcome", "stratum"])
            for (x, y), w, s in zip(self.points, self.outcomes, self.assignments):
                sid = self.strata.ids[s] if s >= 0 else ""
                writer.writerow([repr(float(x)), repr(float(y)), int(w), sid])


def assign_to_units(points, support):
    """First-match assignment of points to a support's units.

    Uses boundary-inclusive point-in-polygon tests so a point on a shared
    edge belongs to exactly one unit (the first in support order) and unit
    totals add up exactly across a partition.
    """
    x, y = points[:, 0], points[:, 1]
    assignment = np.full(points.shape[0], -1, dtype=np.int64)
    unassigned = np.ones(points.shape[0], dtype=bool)
    for k, unit in enumerate(support.units):
        if not unassigned.any():
            break
        idx = np.flatnonzero(unassigned)
        hit = shapely.intersects_xy(unit.geometry, x[idx], y[idx])
        assignment[idx[hit]] = k
        unassigned[idx[hit]] = False
    return assignment


def generate_population(design, rng):
    """Generate a pseudo-population for one replicate.

    Hot-spot cells are chosen uniformly without replacement from the
    generation grid; each receives disc-uniform points around its center,
    every other cell a uniform fill; outcomes are independent Bernoulli.
    """
    xmin, ymin, xmax, ymax = design.bounds
    nx, ny = design.grid_nx, design.grid_ny
    dx, dy = (xmax - xmin) / nx, (ymax - ymin) / ny
    n_cells = nx * ny
    hot = rng.choice(n_cells, size=design.n_hotspots, replace=False) if design.n_hotspots else np.empty(0, dtype=int)
    hot_set = set(int(h) for h in hot)
    chunks = []
    for cell in range(n_cells):
        iy, ix = divmod(cell, nx)
        cx = xmin + (ix + 0.5) * dx
        cy = ymin + (iy + 0.5) * dy
        if cell in hot_set:
            m = design.points_per_hotspot
            radius = design.hotspot_radius * np.sqrt(rng.uniform(size=m))
            angle = rng.uniform(0.0, 2.0 * math.pi, size=m)
            pts = np.column_stack([cx + radius * np.cos(angle), cy + radius * np.sin(angle)])
        else:
            m = design.points_per_cell
            pts = np.column_stack([
                rng.uniform(xmin + ix * dx, xmin + (ix + 1) * dx, size=m),
                rng.uniform(ymin + iy * dy, ymin + (iy + 1) * dy, size=m),
            ])
        chunks.append(pts)
    points = np.vstack(chunks)
    outcomes = (rng.uniform(size=points.shape[0]) < design.outcome_prob).astype(np.int8)
    assignments = assign_to_units(points, design.strata)
    totals = np.bincount(assignments[assignments >= 0], minlength=len(design.strata))
    n_outside = int(np.sum(assignments < 0))
    if n_outside:
        logger.info("%d of %d points fall outside every stratum and are not sampled",
                    n_outside, points.shape[0])
    return PseudoPopulation(points=points, outcomes=outcomes, strata=design.strata,
                            assignments=assignments, strata_totals=totals,
                            n_outside=n_outside)


def stratified_estimates(pop, strata=None, n_samp=50, rng=None):
    """Design-based estimates from a stratified simple random sample.

    Draws ``n_samp`` points without replacement in every stratum and
    evaluates the expansion estimator and its exact SRS variance (finite
    population correction included).  Raises when any stratum holds fewer
    than ``n_samp`` points, naming every offender.
    """
    if rng is None:
        raise DataError("stratified_estimates needs an explicit random generator")
    if strata is None or strata is pop.strata:
        strata = pop.strata
        assignments = pop.assignments
    else:
        assignments = assign_to_units(pop.points, strata)
    n_units = len(strata)
    counts = np.empty(n_units)
    variances = np.empty(n_units)
    short = []
    members = [np.flatnonzero(assignments == i) for i in range(n_units)]
    for i, idx in enumerate(members):
        if idx.size < n_samp:
            short.append((strata.ids[i], idx.size))
    if short:
        detail = ", ".join(f"{sid!r} ({n} < {n_samp})" for sid, n in short)
        raise DataError(f"strata with insufficient population for the sample size: {detail}")
    for i, idx in enumerate(members):
        N = idx.size
        sample = rng.choice(idx, size=n_samp, replace=False)
        wsum = float(pop.outcomes[sample].sum())
        phat = wsum / n_samp
        counts[i] = (N / n_samp) * wsum
        variances[i] = (1.0 - n_samp / N) * N * N * phat * (1.0 - phat) / (n_samp - 1)
    level = SurveyLevel(level=1, ids=strata.ids, counts=counts,
                        variances=variances, weights=None)
    return SurveyDataset([level])


def true_means(pop, support):
    """Exact per-unit sums of the outcomes: the simulation ground truth."""
    assignments = assign_to_units(pop.points, support)
    totals = np.zeros(len(support))
    valid = assignments >= 0
    np.add.at(totals, assignments[valid], pop.outcomes[valid].astype(float))
    return totals


def binomial_sign_test(n_positive, n):
    """Exact one-sided binomial tail P(X >= n_positive), X ~ Bin(n, 1/2)."""
    if not 0 <= n_positive <= n:
        raise DataError("sign test needs 0 <= n_positive <= n")
    total = sum(math.comb(n, j) for j in range(n_positive, n + 1))
    return total / 2.0 ** n


@dataclass(frozen=True, eq=False)
class StudyConfig:
    """Settings of the replicate comparison study."""

    replicates: int = 10
    design: SimulationDesign = field(default_factory=SimulationDesign)
    comparators: tuple = ("SI", "VR", "MI")
    iterations: int = 5000
    burn_in: int = 2000
    thin: int = 1
    basis_fraction: float = 0.10
    basis_r: int = None
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    seed: int = 0
    credible_level: float = 0.90
    targets: ArealSupport = None

    def __post_init__(self):
        if self.replicates <= 0:
            raise ConfigError([f"replicates must be positive, got {self.replicates}"])
        bad = [c for c in self.comparators if c not in ("SI", "VR", "MI")]
        if bad:
            raise ConfigError([f"unknown comparators {bad}; expected subset of ['SI', 'VR', 'MI']"])
        if not 0.0 < self.credible_level < 1.0:
            raise ConfigError(
                [f"credible_level must lie in (0, 1), got {self.credible_level}"]
            )
        if self.targets is None:
            object.__setattr__(self, "targets", default_targets(self.design.bounds))


@dataclass(eq=False)
class StudyResult:
    """Per-replicate PAD values, coverage, timings, and sign tests.

    ``coverage`` holds per-replicate fractions of target intervals covering
    the truth; ``pooled_covered`` marks, per target unit, whether the 90%
    interval of the full-model draws pooled across every replicate covers
    that unit's true total.
    """

    comparators: tuple
    pads: dict
    truth: np.ndarray
    coverage: np.ndarray
    pooled_covered: np.ndarray
    mcmc_seconds: dict
    cos_seconds: np.ndarray
    n_outside: int
    sign_tests: dict

    @property
    def pooled_coverage(self):
        return float(np.mean(self.pooled_covered))

    def summary(self):
        return {
            "replicates": int(next(iter(self.mcmc_seconds.values())).size),
            "sign_tests": self.sign_tests,
            "pooled_coverage": self.pooled_coverage,
            "covered_targets": int(self.pooled_covered.sum()),
            "n_targets": int(self.pooled_covered.size),
            "mean_replicate_coverage": float(np.mean(self.coverage)),
            "n_outside": int(self.n_outside),
        }

    def write_outputs(self, outdir):
        outdir = str(outdir)
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "pad_table.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", "comparator", "pad"])
            for comp in self.comparators:
                for rep, value in enumerate(self.pads[comp]):
                    writer.writerow([rep, comp, repr(float(value))])
        with open(os.path.join(outdir, "coverage.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", "coverage"])
            for rep, cov in enumerate(self.coverage):
                writer.writerow([rep, repr(float(cov))])
        with open(os.path.join(outdir, "timings.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", "model", "mcmc_seconds", "cos_seconds"])
            for model, secs in self.mcmc_seconds.items():
                for rep, s in enumerate(secs):
                    cos_s = self.cos_seconds[rep] if model == "CS" else ""
                    writer.writerow([rep, model, repr(float(s)), cos_s and repr(float(cos_s))])
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def run_study(config):
    """Run the replicate comparison study.

    The pseudo-population is generated once per study; each replicate
    re-draws the stratified sample (a fresh realization of the survey
    field) and refits the requested models, so the truth is a single
    fixed vector on the target support.  Every PAD is paired against the
    full model: pad(comparator, CS); positive values mean the full model
    is closer to the truth.
    """
    design = config.design
    strata = design.strata
    targets = config.targets
    X = CovariateMatrix.intercept(len(strata))
    adjacency = adjacency_from_boundaries(strata)
    basis = moran_basis(adjacency, X, fraction=config.basis_fraction, r=config.basis_r)
    W_targets = cos_weights(strata, targets)

    models = ["CS"] + [c for c in config.comparators if c != "SI"]
    pads = {c: np.empty(config.replicates) for c in config.comparators}
    coverage = np.empty(config.replicates)
    mcmc_seconds = {m: np.empty(config.replicates) for m in models}
    cos_seconds = np.empty(config.replicates)
    pooled_draws = []

    master = np.random.SeedSequence(config.seed)
    pop_stream, rep_stream = master.spawn(2)
    pop = generate_population(design, np.random.default_rng(pop_stream))
    truth = true_means(pop, targets)

    rep_seeds = rep_stream.spawn(config.replicates)
    for rep in range(config.replicates):
        streams = rep_seeds[rep].spawn(2)
        samp_rng = np.random.default_rng(streams[0])
        data = stratified_estimates(pop, strata, design.sample_per_stratum, samp_rng)

        estimates = {}
        fit_seeds = streams[1].spawn(len(models))
        for m_idx, model in enumerate(models):
            cfg = SamplerConfig(
                iterations=config.iterations, burn_in=config.burn_in, thin=config.thin,
                seed=int(fit_seeds[m_idx].generate_state(1, dtype=np.uint64)[0]),
            )
            t0 = time.perf_counter()
            draws = run_chain(cfg, data, basis, model, hyper=config.hyper,
                              X=X.X, support_checksum=strata.checksum)
            mcmc_seconds[model][rep] = time.perf_counter() - t0
            t0 = time.perf_counter()
            result = cos_posterior(draws, W_targets, level=config.credible_level,
                                   keep_draws=(model == "CS"))
            elapsed = time.perf_counter() - t0
            if model == "CS":
                cos_seconds[rep] = elapsed
                coverage[rep] = float(np.mean((result.lower <= truth) & (truth <= result.upper)))
                pooled_draws.append(result.draws)
            estimates[model] = result.mean
        if "SI" in config.comparators:
            estimates["SI"] = simple_areal_interpolation(data, W_targets)
        for comp in config.comparators:
            pads[comp][rep] = pad(estimates[comp], estimates["CS"], truth)

    sign_tests = {}
    for comp in config.comparators:
        n_pos = int(np.sum(pads[comp] > 0))
        sign_tests[comp] = {
            "n_positive": n_pos,
            "n": config.replicates,
            "p_value": binomial_sign_test(n_pos, config.replicates),
            "median_pad": float(np.median(pads[comp])),
        }
    pooled = np.vstack(pooled_draws)
    level = config.credible_level
    lo, hi = np.quantile(pooled, [(1 - level) / 2, (1 + level) / 2], axis=0)
    pooled_covered = (lo <= truth) & (truth <= hi)
    return StudyResult(
        comparators=tuple(config.comparators), pads=pads, truth=truth,
        coverage=coverage, pooled_covered=pooled_covered,
        mcmc_seconds=mcmc_seconds, cos_seconds=cos_seconds,
        n_outside=pop.n_outside, sign_tests=sign_tests,
    )
