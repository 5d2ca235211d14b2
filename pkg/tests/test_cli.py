"""End-to-end command-line behaviour: verbs, configs, exit codes, artifacts."""

import csv
import json

import numpy as np
import pytest

from surveycos import tile_support
from surveycos.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from surveycos.data import write_survey_csv
from surveycos.io import read_container

from conftest import square_grid, synthetic_survey

MODERATE_HYPER_JSON = {
    "mu_beta": 3.0, "sigma2_beta": 1.0,
    "alpha_phi": 2.5, "omega_phi": 2.0,
    "mu_Phi": [0.0, 1.0], "sigma2_Phi": 0.25,
    "alpha_eps": 2.5, "omega_eps": 2.0,
    "alpha_gamma": 2.5, "omega_gamma": 2.0,
}


def write_fit_workspace(root, grid_n=3, model="CS", with_variances=True,
                        iterations=240, burn_in=80, seed=5, extra=None):
    """Materialize geometry + survey CSV + run config under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    grid = square_grid(grid_n, grid_n)
    grid.to_geojson(root / "level1.geojson")
    rng = np.random.default_rng(1000 + grid_n)
    ds = synthetic_survey(grid, rng, with_variances=with_variances)
    write_survey_csv(root / "counts1.csv", ds.levels[0])
    config = {
        "levels": [{"level": 1, "geojson": "level1.geojson", "counts": "counts1.csv"}],
        "model": model,
        "basis": {"fraction": 0.3},
        "sampler": {"iterations": iterations, "burn_in": burn_in, "seed": seed},
        "hyper": MODERATE_HYPER_JSON,
        "output": str(root / "out"),
        "store": "fit.scos",
    }
    if extra:
        config.update(extra)
    path = root / "run.json"
    path.write_text(json.dumps(config))
    return path, grid


def read_store_sections(path):
    sections = read_container(path)
    meta = json.loads(sections["META"].decode())
    meta.pop("created_at", None)
    return meta, {k: v for k, v in sections.items() if k != "META"}


# -- fit ---------------------------------------------------------------------------

def test_fit_writes_store_and_report(tmp_path, capsys):
    config_path, grid = write_fit_workspace(tmp_path / "ws")
    assert main(["fit", "--config", str(config_path)]) == EXIT_OK
    out = tmp_path / "ws" / "out"
    assert (out / "fit.scos").exists()
    report = json.loads((out / "fit_diagnostics.json").read_text())
    assert report["model"] == "CS"
    assert report["n_draws"] == (240 - 80)
    assert set(report) >= {"ess", "rhat", "acceptance", "config_fingerprint", "runtime_seconds"}
    stdout = capsys.readouterr().out
    assert "mcmc_seconds=" in stdout and "setup_seconds=" in stdout


def test_fit_store_is_reproducible(tmp_path):
    cfg_a, _ = write_fit_workspace(tmp_path / "a")
    cfg_b, _ = write_fit_workspace(tmp_path / "b")
    assert main(["fit", "--config", str(cfg_a)]) == EXIT_OK
    assert main(["fit", "--config", str(cfg_b)]) == EXIT_OK
    meta_a, body_a = read_store_sections(tmp_path / "a" / "out" / "fit.scos")
    meta_b, body_b = read_store_sections(tmp_path / "b" / "out" / "fit.scos")
    assert meta_a == meta_b
    assert body_a.keys() == body_b.keys()
    for tag in body_a:
        assert body_a[tag] == body_b[tag], f"section {tag} differs"


def test_fit_seed_override_changes_draws(tmp_path):
    cfg, _ = write_fit_workspace(tmp_path / "ws")
    assert main(["fit", "--config", str(cfg)]) == EXIT_OK
    base = (tmp_path / "ws" / "out" / "fit.scos").read_bytes()
    assert main(["fit", "--config", str(cfg), "--seed", "99"]) == EXIT_OK
    assert (tmp_path / "ws" / "out" / "fit.scos").read_bytes() != base


def test_fit_missing_config_is_config_error(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "config file not found" in capsys.readouterr().err


def test_fit_reports_every_config_problem_at_once(tmp_path, capsys):
    root = tmp_path / "ws"
    root.mkdir()
    config = {
        "model": "GLM",
        "levels": [{"level": 2, "geojson": "missing.geojson", "counts": "missing.csv"}],
        "basis": {"fraction": 0.5, "r": 3},
        "adjacency": "hex",
        "mystery": True,
    }
    path = root / "run.json"
    path.write_text(json.dumps(config))
    assert main(["fit", "--config", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    for fragment in ("model", "GLM", "missing.geojson", "missing.csv",
                     "either 'fraction' or 'r'", "adjacency", "mystery",
                     "first entry must be level 1"):
        assert fragment in err, f"missing {fragment!r} in: {err}"


def test_fit_invalid_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "run.json"
    path.write_text("{not valid json")
    assert main(["fit", "--config", str(path)]) == EXIT_CONFIG
    assert "not valid JSON" in capsys.readouterr().err


def test_full_model_requires_variance_column(tmp_path, capsys):
    cfg, _ = write_fit_workspace(tmp_path / "ws", with_variances=False, model="CS")
    assert main(["fit", "--config", str(cfg)]) == EXIT_DATA
    assert "variance" in capsys.readouterr().err


def test_variance_free_model_accepts_bare_counts(tmp_path):
    cfg, _ = write_fit_workspace(tmp_path / "ws", with_variances=False, model="VR")
    assert main(["fit", "--config", str(cfg)]) == EXIT_OK
    meta, _ = read_store_sections(tmp_path / "ws" / "out" / "fit.scos")
    assert meta["model_kind"] == "VR"


def test_degenerate_geometry_is_numerical_error(tmp_path, capsys):
    cfg, _ = write_fit_workspace(tmp_path / "ws", grid_n=2)
    assert main(["fit", "--config", str(cfg)]) == EXIT_NUMERICAL
    assert "positive eigenvalues" in capsys.readouterr().err


# -- cos ----------------------------------------------------------------------------

@pytest.fixture()
def fitted_store(tmp_path):
    cfg, grid = write_fit_workspace(tmp_path / "ws")
    assert main(["fit", "--config", str(cfg)]) == EXIT_OK
    store = tmp_path / "ws" / "out" / "fit.scos"
    target = tile_support((0.5, 0.5, 2.5, 2.5), 2, 2, level=0, prefix="t")
    target_path = tmp_path / "targets.geojson"
    target.to_geojson(target_path)
    return store, target_path, tmp_path


def test_cos_writes_twin_outputs_without_touching_store(fitted_store, capsys):
    store, target_path, root = fitted_store
    before = store.read_bytes()
    outdir = root / "cos_out"
    assert main(["cos", "--store", str(store), "--target", str(target_path),
                 "--output", str(outdir)]) == EXIT_OK
    assert store.read_bytes() == before
    with open(outdir / "cos_result.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["id"] for r in rows] == ["t000", "t001", "t002", "t003"]
    for r in rows:
        assert float(r["ci_lower"]) <= float(r["post_mean"]) <= float(r["ci_upper"])
        assert float(r["ci_level"]) == 0.90
    doc = json.loads((outdir / "cos_result.geojson").read_text())
    props = doc["features"][0]["properties"]
    assert {"id", "post_mean", "post_variance", "ci_lower", "ci_upper", "ci_level"} <= set(props)
    assert "cos_seconds=" in capsys.readouterr().out


def test_cos_is_deterministic_per_store(fitted_store):
    store, target_path, root = fitted_store
    assert main(["cos", "--store", str(store), "--target", str(target_path),
                 "--output", str(root / "c1")]) == EXIT_OK
    assert main(["cos", "--store", str(store), "--target", str(target_path),
                 "--output", str(root / "c2")]) == EXIT_OK
    assert (root / "c1" / "cos_result.csv").read_bytes() == \
        (root / "c2" / "cos_result.csv").read_bytes()


def test_cos_custom_level(fitted_store):
    store, target_path, root = fitted_store
    assert main(["cos", "--store", str(store), "--target", str(target_path),
                 "--level", "0.5", "--output", str(root / "c")]) == EXIT_OK
    with open(root / "c" / "cos_result.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["ci_level"]) == 0.5 for r in rows)


def test_cos_missing_inputs_are_data_errors(fitted_store, capsys):
    store, target_path, root = fitted_store
    assert main(["cos", "--store", str(root / "ghost.scos"),
                 "--target", str(target_path)]) == EXIT_DATA
    assert main(["cos", "--store", str(store),
                 "--target", str(root / "ghost.geojson")]) == EXIT_DATA


# -- diagnose -------------------------------------------------------------------------

def test_diagnose_report_contents(fitted_store, capsys):
    store, target_path, root = fitted_store
    outdir = root / "diag"
    assert main(["diagnose", "--store", str(store), "--output", str(outdir)]) == EXIT_OK
    report = json.loads((outdir / "diagnostics.json").read_text())
    assert report["model"] == "CS"
    assert report["n_draws"] == 160
    assert report["geometry_checksum"]
    assert 0.0 <= report["posterior_predictive_pvalue"] <= 1.0
    assert "rhat" in report and "ess" in report and "acceptance" in report
    assert "posterior predictive p-value" in capsys.readouterr().out


# -- simulate --------------------------------------------------------------------------

def write_study_workspace(root, replicates=1, comparators=("SI",), seed=3):
    root.mkdir(parents=True, exist_ok=True)
    bounds = (0.0, 0.0, 6.0, 6.0)
    tile_support(bounds, 4, 4, level=1, prefix="s").to_geojson(root / "strata.geojson")
    tile_support((1.0, 1.0, 5.0, 5.0), 2, 2, level=0, prefix="t").to_geojson(
        root / "targets.geojson"
    )
    config = {
        "replicates": replicates,
        "comparators": list(comparators),
        "iterations": 200,
        "burn_in": 80,
        "basis": {"fraction": 0.25},
        "seed": seed,
        "design": {
            "bounds": list(bounds),
            "grid_nx": 3, "grid_ny": 3,
            "n_hotspots": 1, "points_per_hotspot": 600,
            "points_per_cell": 200, "hotspot_radius": 0.8,
            "sample_per_stratum": 8,
            "strata_geojson": "strata.geojson",
            "targets_geojson": "targets.geojson",
        },
    }
    path = root / "study.json"
    path.write_text(json.dumps(config))
    return path


def test_simulate_runs_study_and_writes_tables(tmp_path, capsys):
    cfg = write_study_workspace(tmp_path / "ws")
    outdir = tmp_path / "study_out"
    assert main(["simulate", "--config", str(cfg), "--output", str(outdir)]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "PAD(SI)" in stdout
    assert "pooled interval coverage" in stdout
    with open(outdir / "pad_table.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["comparator"] == "SI"
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["replicates"] == 1
    assert summary["n_targets"] == 4


def test_simulate_rejects_unknown_design_keys(tmp_path, capsys):
    cfg = write_study_workspace(tmp_path / "ws")
    raw = json.loads(cfg.read_text())
    raw["design"]["volcanoes"] = 2
    cfg.write_text(json.dumps(raw))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
    assert "volcanoes" in capsys.readouterr().err


def test_simulate_undersized_stratum_is_data_error(tmp_path, capsys):
    cfg = write_study_workspace(tmp_path / "ws")
    raw = json.loads(cfg.read_text())
    raw["design"]["sample_per_stratum"] = 500
    cfg.write_text(json.dumps(raw))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_DATA
    assert "insufficient population" in capsys.readouterr().err


# -- global flags ------------------------------------------------------------------------

def test_threads_flag_validation(tmp_path, capsys):
    cfg, _ = write_fit_workspace(tmp_path / "ws", iterations=120, burn_in=40)
    assert main(["--threads", "0", "fit", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["--threads", "1", "fit", "--config", str(cfg)]) == EXIT_OK


def test_unknown_command_is_usage_error(capsys):
    assert main(["transmogrify"]) == EXIT_CONFIG
