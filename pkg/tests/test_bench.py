"""
Tests for the benchmark pipeline: single rows, suites, config and CLI.
"""
from __future__ import annotations

import json
import pathlib
import sqlite3
from dataclasses import replace

import pandas as pd
import pytest

from bench import (
    DIAGNOSTIC_COLUMNS,
    ROW_COLUMNS,
    ExperimentError,
    RunConfig,
    StateStore,
    SuiteConfig,
    build_manifest,
    load_config,
    resolve_instance_path,
    run_experiment,
    run_suite,
    runtime_fit_exponent,
    summarize,
)
import bench
from conftest import ROOT, tsplib_file
from run import main
from tsplib_io import Instance, save_instance, synthetic_instance


def _suite_config(tmp_path: pathlib.Path, name: str = "out", **kwargs) -> SuiteConfig:
    base = SuiteConfig(
        instance_dir=str(tmp_path),
        cache_dir=str(tmp_path / "cache"),
        output_dir=str(tmp_path / name),
        k_values=(0, 2),
        workers=1,
        record_timings=False,
        plots=False,
    )
    return replace(base, **kwargs)


def _small_manifest():
    return [(synthetic_instance(n, seed=s), k) for n, s in ((20, 0), (25, 1)) for k in (0, 2)]


def test_run_experiment_without_separators() -> None:
    row = run_experiment(synthetic_instance(30, seed=4), 0, RunConfig(cache_dir=None))
    assert row.df == 1.0
    assert row.n == 30 and row.k == 0
    assert row.reduction_pct == pytest.approx(100.0 * (row.nn_cost - row.achci_cost) / row.nn_cost, abs=1e-9)
    assert row.nn_time_s is not None and row.achci_time_s is not None
    assert 3 <= row.hull_size <= 30
    assert row.stress < 1e-8


def test_run_experiment_with_separators_and_no_timings() -> None:
    row = run_experiment(synthetic_instance(30, seed=4), 4, RunConfig(cache_dir=None, record_timings=False))
    assert row.df > 1.0
    assert row.nn_time_s is None and row.achci_time_s is None and row.dijkstra_time_s is None
    assert set(row.to_row()) == set(ROW_COLUMNS)
    assert list(row.to_diagnostics()) == DIAGNOSTIC_COLUMNS


def test_nn_start_policies() -> None:
    inst = synthetic_instance(25, seed=6)
    first = run_experiment(inst, 0, RunConfig(cache_dir=None, nn_start="first"))
    best = run_experiment(inst, 0, RunConfig(cache_dir=None, nn_start="best"))
    third = run_experiment(inst, 0, RunConfig(cache_dir=None, nn_start="3"))
    assert best.nn_cost <= first.nn_cost
    assert best.nn_cost <= third.nn_cost
    assert first.achci_cost == best.achci_cost


def test_run_experiment_wraps_errors() -> None:
    dup = Instance.from_points("dup", [(0, 0), (10, 0), (0, 10), (0, 0)])
    with pytest.raises(ExperimentError) as exc:
        run_experiment(dup, 0, RunConfig(cache_dir=None))
    assert exc.value.instance == "dup"
    assert exc.value.k == 0
    assert str(exc.value).startswith("dup k=0: DuplicatePointsError:")


def test_suite_writes_reports(tmp_path: pathlib.Path) -> None:
    report = run_suite(_small_manifest(), _suite_config(tmp_path))

    rows_csv = pathlib.Path(report.rows_csv)
    assert rows_csv.read_text().splitlines()[0] == ",".join(ROW_COLUMNS)
    rows = pd.read_csv(rows_csv)
    assert list(zip(rows["instance"], rows["k"])) == [
        ("uniform20_s0", 0),
        ("uniform20_s0", 2),
        ("uniform25_s1", 0),
        ("uniform25_s1", 2),
    ]
    assert (rows.loc[rows["k"] == 0, "df"] == 1.0).all()
    assert rows["nn_time_s"].isna().all()

    summary = json.loads(pathlib.Path(report.summary_json).read_text())
    assert summary["rows"] == 4
    assert summary["wins"] == int((rows["reduction_pct"] > 0).sum())
    assert summary["win_rate"] == pytest.approx((rows["reduction_pct"] > 0).mean())
    assert summary["mean_reduction_pct"] == pytest.approx(rows["reduction_pct"].mean())
    assert summary["runtime_fit_exponent"] is None
    assert summary["failures"] == 0
    assert summary["nn_start"] == "first"

    diag = pd.read_csv(report.diagnostics_csv)
    assert list(diag.columns) == DIAGNOSTIC_COLUMNS
    assert len(diag) == 4
    assert pd.read_csv(report.failures_csv).empty


def test_suite_is_byte_identical_across_runs(tmp_path: pathlib.Path) -> None:
    first = run_suite(_small_manifest(), _suite_config(tmp_path, "a"))
    second = run_suite(_small_manifest(), _suite_config(tmp_path, "b", workers=2))
    assert pathlib.Path(first.rows_csv).read_bytes() == pathlib.Path(second.rows_csv).read_bytes()
    assert pathlib.Path(first.summary_json).read_bytes() == pathlib.Path(second.summary_json).read_bytes()


def test_suite_resumes_from_checkpoint(tmp_path: pathlib.Path) -> None:
    config = _suite_config(tmp_path)
    manifest = _small_manifest()
    run_suite(manifest[:2], config)
    report = run_suite(manifest, config)
    assert report.summary["rows"] == 4

    state = StateStore(config.checkpoint_sqlite)
    try:
        assert len(state.done_keys()) == 4
    finally:
        state.close()


def test_suite_records_failures_and_continues(tmp_path: pathlib.Path) -> None:
    dup = Instance.from_points("dup", [(0, 0), (10, 0), (0, 10), (0, 0)])
    manifest = [(dup, 0), (synthetic_instance(20, seed=0), 0)]
    report = run_suite(manifest, _suite_config(tmp_path))
    failures = pd.read_csv(report.failures_csv)
    assert failures["instance"].tolist() == ["dup"]
    assert "DuplicatePointsError" in failures["error"][0]
    assert report.summary["rows"] == 1
    assert report.summary["failures"] == 1


def test_suite_plots(tmp_path: pathlib.Path) -> None:
    report = run_suite(_small_manifest(), _suite_config(tmp_path, record_timings=True, plots=True))
    names = sorted(pathlib.Path(p).name for p in report.plots)
    assert names == ["ratio_histogram.svg", "ratio_vs_df.svg", "runtime.svg"]
    for p in report.plots:
        assert pathlib.Path(p).read_text().lstrip().startswith("<?xml")


def test_summarize_and_runtime_fit(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "rows.csv"
    pd.DataFrame(
        [
            {"instance": "a", "n": 100, "k": 0, "df": 1.0, "nn_cost": 10.0, "achci_cost": 9.0,
             "reduction_pct": 10.0, "nn_time_s": 0.001, "achci_time_s": 1.0},
            {"instance": "b", "n": 200, "k": 0, "df": 1.0, "nn_cost": 10.0, "achci_cost": 11.0,
             "reduction_pct": -10.0, "nn_time_s": 0.002, "achci_time_s": 8.0},
            {"instance": "c", "n": 400, "k": 0, "df": 1.0, "nn_cost": 10.0, "achci_cost": 8.0,
             "reduction_pct": 20.0, "nn_time_s": 0.004, "achci_time_s": 64.0},
        ],
        columns=ROW_COLUMNS,
    ).to_csv(path, index=False)
    summary = summarize(str(path))
    assert summary["rows"] == 3
    assert summary["wins"] == 2
    assert summary["win_rate"] == pytest.approx(2 / 3)
    assert summary["mean_reduction_pct"] == pytest.approx(20 / 3)
    assert summary["runtime_fit_exponent"] == pytest.approx(3.0)

    assert runtime_fit_exponent([100, 100], [1.0, 2.0]) is None


def test_summarize_empty(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "rows.csv"
    pd.DataFrame(columns=ROW_COLUMNS).to_csv(path, index=False)
    assert summarize(str(path))["rows"] == 0


def test_load_config(tmp_path: pathlib.Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ACHCI_INSTANCE_DIR", "/data/tsplib")
    monkeypatch.delenv("ACHCI_CACHE_DIR", raising=False)
    cfg = tmp_path / "suite.yaml"
    cfg.write_text(
        "k_values: [0, 4]\n"
        "instances: [t70]\n"
        "aliases: {t70: st70}\n"
        "synthetic:\n  - {n: 50, seed: 2}\n"
        "nn_start: best\n"
        "record_timings: false\n"
    )
    config = load_config(str(cfg))
    assert config.instance_dir == "/data/tsplib"
    assert config.cache_dir == "cache"
    assert config.k_values == (0, 4)
    assert config.aliases == {"t70": "st70"}
    assert config.synthetic == ((50, 2),)
    assert config.nn_start == "best"
    assert config.record_timings is False


def test_load_config_rejects_bad_values(tmp_path: pathlib.Path) -> None:
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("k_value: [0]\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(str(cfg))
    cfg.write_text("k_values: [-1]\n")
    with pytest.raises(ValueError):
        load_config(str(cfg))
    cfg.write_text("nn_start: random\n")
    with pytest.raises(ValueError):
        load_config(str(cfg))


def test_resolve_instance_path_with_alias_and_suggestions(tmp_path: pathlib.Path) -> None:
    save_instance(synthetic_instance(10, seed=0), tmp_path / "berlin52.tsp")
    assert resolve_instance_path("erlin52", str(tmp_path), {"erlin52": "berlin52"}).name == "berlin52.tsp"
    assert resolve_instance_path("berlin52", str(tmp_path)).name == "berlin52.tsp"
    with pytest.raises(FileNotFoundError, match="berlin52"):
        resolve_instance_path("berlin25", str(tmp_path))


def test_build_manifest_skips_duplicates(tmp_path: pathlib.Path) -> None:
    save_instance(synthetic_instance(12, seed=0), tmp_path / "tiny.tsp")
    config = _suite_config(tmp_path, instances=("tiny", "tiny"), synthetic=((15, 1),), k_values=(0, 2, 4))
    manifest = build_manifest(config)
    assert [(inst.name, k) for inst, k in manifest] == [
        ("uniform12_s0", 0), ("uniform12_s0", 2), ("uniform12_s0", 4),
        ("uniform15_s1", 0), ("uniform15_s1", 2), ("uniform15_s1", 4),
    ]


def test_cli_solve_and_errors(tmp_path: pathlib.Path) -> None:
    tsp = tmp_path / "u.tsp"
    save_instance(synthetic_instance(15, seed=3), tsp)
    tour_json = tmp_path / "tour.json"
    assert main(["solve", str(tsp), "--k", "2", "--algo", "achci", "--out", str(tour_json)]) == 0
    data = json.loads(tour_json.read_text())
    assert sorted(data["order"]) == list(range(1, 16))

    assert main(["solve", str(tsp), "--algo", "nn", "--nn-start", "best"]) == 0
    assert main(["costs", str(tsp), "--k", "2", "--out", str(tmp_path / "c.csv")]) == 0
    assert main(["embed", str(tsp), "--out", str(tmp_path / "e.csv")]) == 0
    assert main(["gen-separators", str(tsp), "--k", "3", "--out", str(tmp_path / "s.json")]) == 0
    assert main(["parse", str(tmp_path / "missing.tsp")]) == 1


def test_cli_bench(tmp_path: pathlib.Path) -> None:
    cfg = tmp_path / "suite.yaml"
    cfg.write_text(
        f"output_dir: {tmp_path / 'results'}\n"
        f"cache_dir: {tmp_path / 'cache'}\n"
        "k_values: [0, 2]\n"
        "synthetic:\n  - {n: 15, seed: 0}\n"
        "workers: 1\n"
        "record_timings: false\n"
        "plots: false\n"
    )
    assert main(["bench", "--config", str(cfg), "--clean-output"]) == 0
    rows = pd.read_csv(tmp_path / "results" / "rows.csv")
    assert len(rows) == 2
    assert main(["plot", "--rows", str(tmp_path / "results" / "rows.csv")]) == 0
    assert (tmp_path / "results" / "ratio_vs_df.svg").exists()


def test_eil51_without_separators_beats_nn() -> None:
    from tsplib_io import load_instance

    row = run_experiment(load_instance(tsplib_file("eil51")), 0, RunConfig(cache_dir=None))
    assert row.df == 1.0
    assert row.reduction_pct > 0


def test_resume_reruns_rows_from_other_settings(tmp_path: pathlib.Path) -> None:
    manifest = _small_manifest()
    run_suite(manifest, _suite_config(tmp_path, "shared", nn_start="first"))
    resumed = run_suite(manifest, _suite_config(tmp_path, "shared", nn_start="best"))
    fresh = run_suite(manifest, _suite_config(tmp_path, "fresh", nn_start="best"))

    assert pathlib.Path(resumed.rows_csv).read_bytes() == pathlib.Path(fresh.rows_csv).read_bytes()
    assert resumed.summary["nn_start"] == "best"

    state = StateStore(_suite_config(tmp_path, "shared").checkpoint_sqlite)
    try:
        assert len(state.done_keys(RunConfig(nn_start="best", record_timings=False).fingerprint())) == 4
        assert state.done_keys(RunConfig(nn_start="first", record_timings=False).fingerprint()) == set()
    finally:
        state.close()


def test_checkpoint_without_run_key_column_is_upgraded(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "old.sqlite"
    con = sqlite3.connect(path)
    con.execute(
        "CREATE TABLE rows (instance TEXT NOT NULL, k INTEGER NOT NULL, n INTEGER, df REAL, nn_cost REAL, "
        "achci_cost REAL, reduction_pct REAL, nn_time_s REAL, achci_time_s REAL, stress REAL, "
        "hull_size INTEGER, dijkstra_time_s REAL, error TEXT, updated_at_epoch INTEGER, "
        "PRIMARY KEY (instance, k))"
    )
    con.execute("INSERT INTO rows(instance, k, n, nn_cost, achci_cost) VALUES('a', 0, 5, 1.0, 1.0)")
    con.commit()
    con.close()

    state = StateStore(str(path))
    try:
        assert state.done_keys() == {("a", 0)}
        assert state.done_keys(RunConfig().fingerprint()) == set()
    finally:
        state.close()


def test_unexpected_worker_errors_become_failed_rows(tmp_path: pathlib.Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def broken(inst, k, config=RunConfig()):
        raise KeyError("stress")

    monkeypatch.setattr(bench, "run_experiment", broken)
    name, k, row, error = bench._run_row_worker((synthetic_instance(10, seed=0), 2, RunConfig()))
    assert (name, k, row) == ("uniform10_s0", 2, None)
    assert error == "uniform10_s0 k=2: KeyError: 'stress'"

    report = run_suite(_small_manifest()[:1], _suite_config(tmp_path))
    assert report.summary["failures"] == 1
    assert report.summary["rows"] == 0


def test_desk_scale_config_is_deterministic() -> None:
    config = load_config(str(ROOT / "configs" / "table1_small.yaml"))
    assert config.record_timings is False
    assert config.k_values == (0, 2, 4, 8)
    assert config.resume is True
