"""Command-line front end: fit a model and persist draws, query stored
draws on new target supports, run the replicate comparison study, and
report diagnostics.

Verbs:
    fit       read geometry + survey CSVs, run the sampler, save the draw store
    cos       change-of-support query against a saved draw store (no MCMC)
    simulate  replicate comparison study from a declarative study config
    diagnose  diagnostics report (ESS, R-hat, acceptance, predictive p-value)

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from .basis import CovariateMatrix, moran_basis
from .data import read_survey_csv, SurveyDataset
from .draws import PosteriorDraws
from .errors import ConfigError, DataError, NumericalError, SurveyCosError
from .geometry import ArealSupport, adjacency_from_boundaries, cos_weights
from .inference import cos_posterior, posterior_predictive_pvalue
from .model import Hyperparameters
from .sampler import SamplerConfig, run_chain
from .simulate import SimulationDesign, StudyConfig, run_study

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_MODEL_KINDS = ("CS", "VR", "MI")


def _check_keys(section, mapping, allowed, errors):
    """Strict-mode key validation: collect every unknown key."""
    if not isinstance(mapping, dict):
        errors.append(f"{section}: expected an object, got {type(mapping).__name__}")
        return False
    for key in sorted(set(mapping) - set(allowed)):
        errors.append(f"{section}: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})")
    return True


def _build_sampler_config(mapping, errors, overrides=None):
    allowed = {f.name for f in dataclasses.fields(SamplerConfig)}
    if not _check_keys("sampler", mapping, allowed, errors):
        return None
    merged = dict(mapping)
    if overrides:
        merged.update(overrides)
    try:
        return SamplerConfig(**{k: v for k, v in merged.items() if k in allowed})
    except ConfigError as exc:
        errors.extend(f"sampler: {e}" for e in exc.errors)
    except TypeError as exc:
        errors.append(f"sampler: {exc}")
    return None


def _build_hyper(mapping, errors):
    allowed = {f.name for f in dataclasses.fields(Hyperparameters)}
    if not _check_keys("hyper", mapping, allowed, errors):
        return None
    kwargs = dict(mapping)
    for key in ("mu_beta", "mu_Phi"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return Hyperparameters(**kwargs)
    except (DataError, ValueError, TypeError) as exc:
        errors.append(f"hyper: {exc}")
    return None


@dataclasses.dataclass(frozen=True, eq=False)
class RunConfig:
    """Declarative description of one model fit.

    Parsed strictly: unknown keys, missing files, and invalid values are
    all reported together in a single configuration error.
    """

    levels: tuple
    model: str
    basis_fraction: float
    basis_r: int
    adjacency_rule: str
    sampler: SamplerConfig
    hyper: Hyperparameters
    output: str
    store: str

    _ALLOWED = {
        "levels", "model", "basis", "adjacency", "sampler", "hyper",
        "output", "store",
    }
    _LEVEL_ALLOWED = {"level", "geojson", "counts"}

    @classmethod
    def from_dict(cls, raw, base_dir=".", seed=None, output=None):
        errors = []
        if not _check_keys("config", raw, cls._ALLOWED, errors):
            raise ConfigError(errors)

        model = raw.get("model", "CS")
        if model not in _MODEL_KINDS:
            errors.append(f"model: expected one of {list(_MODEL_KINDS)}, got {model!r}")

        levels = []
        raw_levels = raw.get("levels")
        if not isinstance(raw_levels, list) or not raw_levels:
            errors.append("levels: expected a non-empty list of level entries")
        else:
            for k, entry in enumerate(raw_levels):
                if not _check_keys(f"levels[{k}]", entry, cls._LEVEL_ALLOWED, errors):
                    continue
                missing = [key for key in ("level", "geojson", "counts") if key not in entry]
                if missing:
                    errors.append(f"levels[{k}]: missing required keys {missing}")
                    continue
                geojson = os.path.join(base_dir, entry["geojson"])
                counts = os.path.join(base_dir, entry["counts"])
                for path in (geojson, counts):
                    if not os.path.exists(path):
                        errors.append(f"levels[{k}]: file not found: {path}")
                levels.append({"level": entry["level"], "geojson": geojson, "counts": counts})
            if levels and levels[0]["level"] != 1:
                errors.append("levels: the first entry must be level 1 (the fine support)")

        basis = raw.get("basis", {"fraction": 0.10})
        fraction, r = 0.10, None
        if _check_keys("basis", basis, {"fraction", "r"}, errors):
            if "fraction" in basis and "r" in basis:
                errors.append("basis: give either 'fraction' or 'r', not both")
            elif "r" in basis:
                r = basis["r"]
                if not isinstance(r, int) or r < 1:
                    errors.append(f"basis: r must be a positive integer, got {r!r}")
            elif "fraction" in basis:
                fraction = basis["fraction"]
                if not 0 < fraction <= 1:
                    errors.append(f"basis: fraction must lie in (0, 1], got {fraction!r}")

        adjacency_rule = raw.get("adjacency", "rook")
        if adjacency_rule not in ("rook", "queen"):
            errors.append(f"adjacency: expected 'rook' or 'queen', got {adjacency_rule!r}")

        sampler_overrides = {} if seed is None else {"seed": seed}
        sampler = _build_sampler_config(raw.get("sampler", {}), errors, sampler_overrides)
        hyper = _build_hyper(raw.get("hyper", {}), errors)

        out = output if output is not None else raw.get("output", ".")
        store = raw.get("store", "draws.scos")

        if errors:
            raise ConfigError(errors)
        return cls(levels=tuple(levels), model=model, basis_fraction=fraction,
                   basis_r=r, adjacency_rule=adjacency_rule, sampler=sampler,
                   hyper=hyper, output=str(out), store=str(store))

    @classmethod
    def from_file(cls, path, seed=None, output=None):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"])
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"])
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)),
                             seed=seed, output=output)


def _load_dataset(config):
    """Read every level's geometry + survey CSV and assemble the dataset."""
    supports = {}
    levels = []
    level1_support = None
    for entry in config.levels:
        support = ArealSupport.from_geojson(entry["geojson"], level=entry["level"])
        supports[entry["level"]] = support
        if entry["level"] == 1:
            level1_support = support
    require_variance = config.model != "VR"
    for entry in config.levels:
        support = supports[entry["level"]]
        weights = None
        if entry["level"] != 1:
            weights = cos_weights(level1_support, support)
        levels.append(read_survey_csv(
            entry["counts"], support, level=entry["level"], weights=weights,
            require_variance=require_variance,
        ))
    return SurveyDataset(levels), level1_support


def cmd_fit(args):
    config = RunConfig.from_file(args.config, seed=args.seed, output=args.output)
    os.makedirs(config.output, exist_ok=True)
    t_start = time.perf_counter()
    data, support = _load_dataset(config)
    X = CovariateMatrix.intercept(len(support))
    adjacency = adjacency_from_boundaries(support, rule=config.adjacency_rule)
    basis = moran_basis(adjacency, X, fraction=config.basis_fraction, r=config.basis_r)
    io_seconds = time.perf_counter() - t_start

    t_fit = time.perf_counter()
    draws = run_chain(config.sampler, data, basis, config.model, hyper=config.hyper,
                      X=X.X, support_checksum=support.checksum)
    fit_seconds = time.perf_counter() - t_fit

    store_path = os.path.join(config.output, config.store)
    draws.save(store_path, support=support)

    report = {
        "store": store_path,
        "model": config.model,
        "n_draws": draws.n_draws,
        "ess": draws.meta.get("ess"),
        "rhat": draws.meta.get("rhat"),
        "acceptance": draws.meta.get("acceptance"),
        "config_fingerprint": draws.meta.get("config_fingerprint"),
        "runtime_seconds": {"setup": io_seconds, "mcmc": fit_seconds},
    }
    report_path = os.path.join(config.output, "fit_diagnostics.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"fit: wrote {store_path} ({draws.n_draws} draws) and {report_path}")
    print(f"fit: mcmc_seconds={fit_seconds:.3f} setup_seconds={io_seconds:.3f}")
    return EXIT_OK


def cmd_cos(args):
    t_io = time.perf_counter()
    draws = PosteriorDraws.load(args.store)
    target = ArealSupport.from_geojson(args.target, level=0)
    if draws.support is None:
        raise DataError("draw store carries no source geometry; cannot build weights")
    io_seconds = time.perf_counter() - t_io

    t_weights = time.perf_counter()
    weights = cos_weights(draws.support, target)
    weights_seconds = time.perf_counter() - t_weights

    t_cos = time.perf_counter()
    result = cos_posterior(draws, weights, level=args.level)
    cos_seconds = time.perf_counter() - t_cos

    outdir = args.output or "."
    os.makedirs(outdir, exist_ok=True)
    t_write = time.perf_counter()
    csv_path = os.path.join(outdir, "cos_result.csv")
    result.to_csv(csv_path)
    geojson_path = os.path.join(outdir, "cos_result.geojson")
    target.to_geojson(geojson_path, properties=result.properties())
    io_seconds += time.perf_counter() - t_write

    print(f"cos: wrote {csv_path} and {geojson_path}")
    print(f"cos: cos_seconds={cos_seconds:.6f} weights_seconds={weights_seconds:.3f} "
          f"io_seconds={io_seconds:.3f}")
    return EXIT_OK


_STUDY_ALLOWED = {
    "replicates", "comparators", "iterations", "burn_in", "thin", "basis",
    "seed", "credible_level", "design",
}
_DESIGN_ALLOWED = {
    "bounds", "grid_nx", "grid_ny", "n_hotspots", "points_per_hotspot",
    "points_per_cell", "hotspot_radius", "outcome_prob", "sample_per_stratum",
    "strata_geojson", "targets_geojson",
}


def _study_config_from_file(path, seed=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file is not valid JSON: {exc}"])
    base_dir = os.path.dirname(os.path.abspath(path))

    errors = []
    _check_keys("study", raw, _STUDY_ALLOWED, errors)
    design_raw = raw.get("design", {})
    strata = targets = None
    if _check_keys("design", design_raw, _DESIGN_ALLOWED, errors):
        design_kwargs = {k: v for k, v in design_raw.items()
                         if k not in ("strata_geojson", "targets_geojson")}
        if "bounds" in design_kwargs:
            design_kwargs["bounds"] = tuple(design_kwargs["bounds"])
        for key, level in (("strata_geojson", 1), ("targets_geojson", 0)):
            if key in design_raw:
                geo_path = os.path.join(base_dir, design_raw[key])
                if not os.path.exists(geo_path):
                    errors.append(f"design: file not found: {geo_path}")
                else:
                    support = ArealSupport.from_geojson(geo_path, level=level)
                    if key == "strata_geojson":
                        strata = support
                    else:
                        targets = support
    fraction, r = 0.10, None
    basis = raw.get("basis", {})
    if _check_keys("basis", basis, {"fraction", "r"}, errors):
        fraction = basis.get("fraction", 0.10)
        r = basis.get("r")
    if errors:
        raise ConfigError(errors)

    design = SimulationDesign(**design_kwargs, strata=strata) if strata is not None \
        else SimulationDesign(**design_kwargs)
    kwargs = {k: raw[k] for k in
              ("replicates", "iterations", "burn_in", "thin", "credible_level")
              if k in raw}
    if "comparators" in raw:
        kwargs["comparators"] = tuple(raw["comparators"])
    kwargs["seed"] = seed if seed is not None else raw.get("seed", 0)
    return StudyConfig(design=design, basis_fraction=fraction, basis_r=r,
                       targets=targets, **kwargs)


def cmd_simulate(args):
    config = _study_config_from_file(args.config, seed=args.seed)
    t0 = time.perf_counter()
    result = run_study(config)
    elapsed = time.perf_counter() - t0
    outdir = args.output or "."
    result.write_outputs(outdir)
    summary = result.summary()
    print(f"simulate: {summary['replicates']} replicates in {elapsed:.1f}s -> {outdir}")
    for comp, stats in sorted(summary["sign_tests"].items()):
        print(f"simulate: PAD({comp}) positive {stats['n_positive']}/{stats['n']} "
              f"median={stats['median_pad']:.3f} sign-test p={stats['p_value']:.4g}")
    print(f"simulate: pooled interval coverage "
          f"{summary['covered_targets']}/{summary['n_targets']}")
    return EXIT_OK


def cmd_diagnose(args):
    draws = PosteriorDraws.load(args.store)
    meta = draws.meta
    report = {
        "store": os.path.abspath(args.store),
        "model": meta.get("model_kind"),
        "n_draws": draws.n_draws,
        "chains": meta.get("chains"),
        "ess": meta.get("ess"),
        "rhat": meta.get("rhat"),
        "acceptance": meta.get("acceptance"),
        "config_fingerprint": meta.get("config_fingerprint"),
        "geometry_checksum": draws.geometry_checksum,
    }
    if draws.dataset is not None:
        report["posterior_predictive_pvalue"] = posterior_predictive_pvalue(draws)
    outdir = args.output or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "diagnostics.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"diagnose: wrote {path}")
    if "posterior_predictive_pvalue" in report:
        print(f"diagnose: posterior predictive p-value "
              f"{report['posterior_predictive_pvalue']:.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="surveycos",
        description="Spatial change of support for count-valued survey data.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads for reproducible timings")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the model and persist posterior draws")
    p_fit.add_argument("--config", required=True, help="declarative run config (JSON)")
    p_fit.add_argument("--seed", type=int, default=None, help="override the sampler seed")
    p_fit.add_argument("--output", default=None, help="output directory override")
    p_fit.set_defaults(func=cmd_fit)

    p_cos = sub.add_parser("cos", help="change-of-support query against stored draws")
    p_cos.add_argument("--store", required=True, help="draw store written by fit")
    p_cos.add_argument("--target", required=True, help="target support GeoJSON")
    p_cos.add_argument("--level", type=float, default=0.90, help="credible level")
    p_cos.add_argument("--output", default=None, help="output directory")
    p_cos.set_defaults(func=cmd_cos)

    p_sim = sub.add_parser("simulate", help="replicate comparison study")
    p_sim.add_argument("--config", required=True, help="study config (JSON)")
    p_sim.add_argument("--seed", type=int, default=None, help="override the study seed")
    p_sim.add_argument("--output", default=None, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_diag = sub.add_parser("diagnose", help="diagnostics report for a draw store")
    p_diag.add_argument("--store", required=True, help="draw store written by fit")
    p_diag.add_argument("--output", default=None, help="output directory")
    p_diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError([f"--threads must be positive, got {args.threads}"])
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SurveyCosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
