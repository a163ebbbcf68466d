"""
Benchmark pipeline: separators -> true costs -> NN and ACHCI tours -> reports.

A suite is a manifest of (instance, k) rows. Rows run in a process pool,
each result is checkpointed in SQLite as soon as it arrives, and reports are
written in manifest order so reruns are reproducible and resumable.
"""
from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
import os
import pathlib
import sqlite3
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import duckdb
import numpy as np
import pandas as pd
import yaml
from rapidfuzz import fuzz, process

from geometry import generate_separators
from heuristics import achci, nearest_neighbor, nearest_neighbor_best_start
from mds import embed_2d, embedding_stress, gram_from_costs
from shortest_paths import cached_costs, deviation_factor
from tsplib_io import Instance, load_instance, synthetic_instance

logger = logging.getLogger(__name__)

ROW_COLUMNS = [
    "instance",
    "n",
    "k",
    "df",
    "nn_cost",
    "achci_cost",
    "reduction_pct",
    "nn_time_s",
    "achci_time_s",
]
DIAGNOSTIC_COLUMNS = ["instance", "k", "stress", "hull_size", "dijkstra_time_s"]

_CONFIG_KEYS = {
    "instance_dir",
    "cache_dir",
    "output_dir",
    "k_values",
    "instances",
    "aliases",
    "synthetic",
    "nn_start",
    "workers",
    "record_timings",
    "resume",
    "plots",
}


class ExperimentError(RuntimeError):
    def __init__(self, instance: str, k: int, cause: BaseException) -> None:
        self.instance = instance
        self.k = k
        super().__init__(f"{instance} k={k}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class RunConfig:
    cache_dir: Optional[str] = "cache"
    # "first" (node 1), "best" (best of all starts) or a 1-based node id.
    nn_start: str = "first"
    record_timings: bool = True
    dijkstra_workers: int = 1

    def fingerprint(self) -> str:
        """Settings that change row values; checkpointed rows are reused only under the same one."""
        return json.dumps({"nn_start": self.nn_start, "record_timings": self.record_timings}, sort_keys=True)


@dataclass(frozen=True)
class SuiteConfig:
    instance_dir: str = "tsplib"
    cache_dir: Optional[str] = "cache"
    output_dir: str = "results"
    k_values: Tuple[int, ...] = (0, 2, 4, 8, 16, 32)
    instances: Tuple[str, ...] = ()
    aliases: Dict[str, str] = field(default_factory=dict)
    synthetic: Tuple[Tuple[int, int], ...] = ()
    nn_start: str = "first"
    workers: Optional[int] = None
    record_timings: bool = True
    resume: bool = True
    plots: bool = True

    @property
    def checkpoint_sqlite(self) -> str:
        return str(pathlib.Path(self.output_dir) / "checkpoint.sqlite")

    def run_config(self) -> RunConfig:
        return RunConfig(cache_dir=self.cache_dir, nn_start=self.nn_start, record_timings=self.record_timings)


@dataclass
class ExperimentRow:
    instance: str
    n: int
    k: int
    df: float
    nn_cost: float
    achci_cost: float
    reduction_pct: float
    nn_time_s: Optional[float]
    achci_time_s: Optional[float]
    stress: float
    hull_size: int
    dijkstra_time_s: Optional[float]

    def to_row(self) -> Dict[str, Any]:
        return {c: getattr(self, c) for c in ROW_COLUMNS}

    def to_diagnostics(self) -> Dict[str, Any]:
        return {c: getattr(self, c) for c in DIAGNOSTIC_COLUMNS}


def _validate_nn_start(value: str) -> str:
    value = str(value).strip().lower()
    if value in ("first", "best") or (value.isdigit() and int(value) >= 1):
        return value
    raise ValueError(f"nn_start must be 'first', 'best' or a 1-based node id, got {value!r}")


def load_config(path: str) -> SuiteConfig:
    """Read a YAML suite config. Directories default to $ACHCI_INSTANCE_DIR / $ACHCI_CACHE_DIR."""
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")

    k_values = tuple(int(k) for k in data.get("k_values", SuiteConfig.k_values))
    if any(k < 0 for k in k_values):
        raise ValueError(f"{path}: k_values must be >= 0, got {list(k_values)}")
    synthetic = tuple((int(s["n"]), int(s.get("seed", 0))) for s in data.get("synthetic") or [])
    workers = data.get("workers")
    if workers is not None and int(workers) < 1:
        raise ValueError(f"{path}: workers must be >= 1")

    cache_dir = data["cache_dir"] if "cache_dir" in data else (os.getenv("ACHCI_CACHE_DIR") or "cache")
    return SuiteConfig(
        instance_dir=data.get("instance_dir") or os.getenv("ACHCI_INSTANCE_DIR") or "tsplib",
        cache_dir=cache_dir,
        output_dir=data.get("output_dir", "results"),
        k_values=k_values,
        instances=tuple(str(x) for x in data.get("instances") or []),
        aliases={str(a): str(b) for a, b in (data.get("aliases") or {}).items()},
        synthetic=synthetic,
        nn_start=_validate_nn_start(data.get("nn_start", "first")),
        workers=None if workers is None else int(workers),
        record_timings=bool(data.get("record_timings", True)),
        resume=bool(data.get("resume", True)),
        plots=bool(data.get("plots", True)),
    )


def resolve_instance_path(name: str, instance_dir: str, aliases: Optional[Dict[str, str]] = None) -> pathlib.Path:
    real = (aliases or {}).get(name, name)
    root = pathlib.Path(instance_dir)
    for candidate in (root / f"{real}.tsp", root / real):
        if candidate.is_file():
            return candidate

    stems = sorted({p.stem for p in root.glob("*.tsp")}) if root.is_dir() else []
    hint = ""
    if stems:
        close = process.extract(real, stems, scorer=fuzz.WRatio, limit=3)
        hint = f"; closest on disk: {', '.join(m for m, _, _ in close)}"
    alias_note = f" (alias of {name})" if real != name else ""
    raise FileNotFoundError(f"instance {real}{alias_note} not found in {root}{hint}")


def build_manifest(config: SuiteConfig) -> List[Tuple[Instance, int]]:
    instances: List[Instance] = []
    for name in config.instances:
        inst = load_instance(resolve_instance_path(name, config.instance_dir, config.aliases))
        instances.append(inst)
    for n, seed in config.synthetic:
        instances.append(synthetic_instance(n, seed))

    manifest: List[Tuple[Instance, int]] = []
    seen: Set[Tuple[str, int]] = set()
    for inst in instances:
        for k in config.k_values:
            key = (inst.name, k)
            if key in seen:
                logger.warning(f"[manifest] duplicate row {inst.name} k={k} skipped")
                continue
            seen.add(key)
            manifest.append((inst, k))
    logger.info(f"[manifest] {len(instances)} instances x {len(config.k_values)} separator counts = {len(manifest)} rows")
    return manifest


def _nn_tour(C, nn_start: str):
    if nn_start == "best":
        return nearest_neighbor_best_start(C)
    start = 0 if nn_start == "first" else int(nn_start) - 1
    return nearest_neighbor(C, start)


def run_experiment(inst: Instance, k: int, config: RunConfig = RunConfig()) -> ExperimentRow:
    """Full pipeline for one (instance, k) row."""
    try:
        seps = generate_separators(inst, k)

        t0 = time.perf_counter()
        C = cached_costs(inst, seps, config.cache_dir, workers=config.dijkstra_workers)
        dijkstra_time = time.perf_counter() - t0
        df = deviation_factor(C, inst)

        t0 = time.perf_counter()
        nn = _nn_tour(C, config.nn_start)
        nn_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        embedding = embed_2d(gram_from_costs(C))
        trace: List[Tuple[int, int, int]] = []
        tour = achci(C, embedding, trace=trace)
        achci_time = time.perf_counter() - t0
        stress = embedding_stress(C, embedding)
    except Exception as e:
        raise ExperimentError(inst.name, k, e) from e

    timed = config.record_timings
    return ExperimentRow(
        instance=inst.name,
        n=inst.n,
        k=k,
        df=df,
        nn_cost=nn.cost,
        achci_cost=tour.cost,
        reduction_pct=100.0 * (nn.cost - tour.cost) / nn.cost,
        nn_time_s=nn_time if timed else None,
        achci_time_s=achci_time if timed else None,
        stress=stress,
        hull_size=inst.n - len(trace),
        dijkstra_time_s=dijkstra_time if timed else None,
    )


class StateStore:
    """SQLite checkpoint of finished rows, keyed by (instance, k)."""

    def __init__(self, path: str) -> None:
        self.path = path
        self.con = sqlite3.connect(path, timeout=30)
        self.con.execute("PRAGMA busy_timeout=5000;")
        try:
            self.con.execute("PRAGMA journal_mode=WAL;")
        except sqlite3.OperationalError as e:
            if "locked" not in str(e).lower():
                raise
        self._execute(
            """
            CREATE TABLE IF NOT EXISTS rows (
              instance TEXT NOT NULL,
              k INTEGER NOT NULL,
              n INTEGER,
              df REAL,
              nn_cost REAL,
              achci_cost REAL,
              reduction_pct REAL,
              nn_time_s REAL,
              achci_time_s REAL,
              stress REAL,
              hull_size INTEGER,
              dijkstra_time_s REAL,
              error TEXT,
              run_key TEXT,
              updated_at_epoch INTEGER,
              PRIMARY KEY (instance, k)
            )
            """
        )
        columns = {r[1] for r in self._execute("PRAGMA table_info(rows)").fetchall()}
        if "run_key" not in columns:
            self._execute("ALTER TABLE rows ADD COLUMN run_key TEXT")
        self.con.commit()

    def _execute(self, sql: str, params: tuple = ()) -> sqlite3.Cursor:
        for attempt in range(6):
            try:
                return self.con.execute(sql, params)
            except sqlite3.OperationalError as e:
                if "locked" not in str(e).lower() or attempt == 5:
                    raise
                time.sleep(0.5 * (attempt + 1))
        raise sqlite3.OperationalError("database is locked")

    @staticmethod
    def _finished(run_key: Optional[str]) -> Tuple[str, tuple]:
        if run_key is None:
            return "error IS NULL", ()
        return "error IS NULL AND run_key = ?", (run_key,)

    def done_keys(self, run_key: Optional[str] = None) -> Set[Tuple[str, int]]:
        where, params = self._finished(run_key)
        rows = self._execute(f"SELECT instance, k FROM rows WHERE {where}", params).fetchall()
        return {(r[0], int(r[1])) for r in rows}

    def upsert_row(self, row: ExperimentRow, run_key: Optional[str] = None) -> None:
        d = asdict(row)
        self._execute(
            """
            INSERT INTO rows(instance, k, n, df, nn_cost, achci_cost, reduction_pct, nn_time_s,
                             achci_time_s, stress, hull_size, dijkstra_time_s, error, run_key,
                             updated_at_epoch)
            VALUES(?,?,?,?,?,?,?,?,?,?,?,?,NULL,?,?)
            ON CONFLICT(instance, k) DO UPDATE SET
              n=excluded.n, df=excluded.df, nn_cost=excluded.nn_cost, achci_cost=excluded.achci_cost,
              reduction_pct=excluded.reduction_pct, nn_time_s=excluded.nn_time_s,
              achci_time_s=excluded.achci_time_s, stress=excluded.stress, hull_size=excluded.hull_size,
              dijkstra_time_s=excluded.dijkstra_time_s, error=NULL, run_key=excluded.run_key,
              updated_at_epoch=excluded.updated_at_epoch
            """,
            (
                d["instance"], d["k"], d["n"], d["df"], d["nn_cost"], d["achci_cost"], d["reduction_pct"],
                d["nn_time_s"], d["achci_time_s"], d["stress"], d["hull_size"], d["dijkstra_time_s"],
                run_key,
                int(time.time()),
            ),
        )

    def upsert_error(self, instance: str, k: int, err: str) -> None:
        self._execute(
            """
            INSERT INTO rows(instance, k, error, updated_at_epoch)
            VALUES(?,?,?,?)
            ON CONFLICT(instance, k) DO UPDATE SET
              error=excluded.error,
              updated_at_epoch=excluded.updated_at_epoch
            """,
            (instance, k, err, int(time.time())),
        )

    def load_rows(self, run_key: Optional[str] = None) -> Dict[Tuple[str, int], ExperimentRow]:
        where, params = self._finished(run_key)
        cur = self._execute(
            f"""
            SELECT instance, n, k, df, nn_cost, achci_cost, reduction_pct, nn_time_s, achci_time_s,
                   stress, hull_size, dijkstra_time_s
            FROM rows WHERE {where}
            """,
            params,
        )
        out = {}
        for r in cur.fetchall():
            row = ExperimentRow(*r)
            out[(row.instance, int(row.k))] = row
        return out

    def load_errors(self) -> Dict[Tuple[str, int], str]:
        rows = self._execute("SELECT instance, k, error FROM rows WHERE error IS NOT NULL").fetchall()
        return {(r[0], int(r[1])): r[2] for r in rows}

    def commit(self) -> None:
        for attempt in range(6):
            try:
                self.con.commit()
                return
            except sqlite3.OperationalError as e:
                if "locked" not in str(e).lower() or attempt == 5:
                    raise
                time.sleep(0.5 * (attempt + 1))

    def close(self) -> None:
        self.con.close()


def _run_row_worker(
    args: Tuple[Instance, int, RunConfig]
) -> Tuple[str, int, Optional[ExperimentRow], Optional[str]]:
    """Returns (instance, k, row, error)."""
    inst, k, cfg = args
    try:
        return inst.name, k, run_experiment(inst, k, cfg), None
    except ExperimentError as e:
        return inst.name, k, None, str(e)
    except Exception as e:
        return inst.name, k, None, str(ExperimentError(inst.name, k, e))


@dataclass(frozen=True)
class SuiteReport:
    rows_csv: str
    diagnostics_csv: str
    failures_csv: str
    summary_json: str
    plots: Tuple[str, ...]
    summary: Dict[str, Any]


def runtime_fit_exponent(ns: Sequence[float], times: Sequence[float]) -> Optional[float]:
    """Slope of log(time) against log(n), or None with fewer than two distinct n."""
    pairs = [(float(n), float(t)) for n, t in zip(ns, times) if t is not None and not math.isnan(t) and t > 0]
    if len({n for n, _ in pairs}) < 2:
        return None
    x = np.log([n for n, _ in pairs])
    y = np.log([t for _, t in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def summarize(rows_csv: str) -> Dict[str, Any]:
    """Win count, win rate and mean reduction straight from the row CSV."""
    rows = pd.read_csv(rows_csv)
    if rows.empty:
        return {"rows": 0, "wins": 0, "win_rate": None, "mean_reduction_pct": None, "runtime_fit_exponent": None}

    con = duckdb.connect()
    try:
        n_rows, wins, mean_reduction = con.execute(
            """
            SELECT count(*),
                   count(*) FILTER (WHERE reduction_pct > 0),
                   avg(reduction_pct)
            FROM read_csv_auto(?, header = true)
            """,
            [str(rows_csv)],
        ).fetchone()
    finally:
        con.close()

    return {
        "rows": int(n_rows),
        "wins": int(wins),
        "win_rate": wins / n_rows,
        "mean_reduction_pct": float(mean_reduction),
        "runtime_fit_exponent": runtime_fit_exponent(rows["n"], rows["achci_time_s"]),
    }


def _write_reports(
    manifest: Sequence[Tuple[Instance, int]],
    state: StateStore,
    config: SuiteConfig,
) -> SuiteReport:
    out = pathlib.Path(config.output_dir)
    done = state.load_rows(config.run_config().fingerprint())
    errors = state.load_errors()
    keys = [(inst.name, k) for inst, k in manifest]

    ordered = [done[key] for key in keys if key in done]
    rows_csv = out / "rows.csv"
    diagnostics_csv = out / "diagnostics.csv"
    failures_csv = out / "failures.csv"
    pd.DataFrame([r.to_row() for r in ordered], columns=ROW_COLUMNS).to_csv(rows_csv, index=False)
    pd.DataFrame([r.to_diagnostics() for r in ordered], columns=DIAGNOSTIC_COLUMNS).to_csv(
        diagnostics_csv, index=False
    )
    failures = [{"instance": name, "k": k, "error": errors[(name, k)]} for name, k in keys if (name, k) in errors and (name, k) not in done]
    pd.DataFrame(failures, columns=["instance", "k", "error"]).to_csv(failures_csv, index=False)

    summary = summarize(str(rows_csv))
    summary["failures"] = len(failures)
    summary["nn_start"] = config.nn_start
    summary_json = out / "summary.json"
    summary_json.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    plot_paths: List[str] = []
    if config.plots and ordered:
        from plots import write_suite_plots

        plot_paths = write_suite_plots(str(rows_csv), str(out))

    return SuiteReport(
        rows_csv=str(rows_csv),
        diagnostics_csv=str(diagnostics_csv),
        failures_csv=str(failures_csv),
        summary_json=str(summary_json),
        plots=tuple(plot_paths),
        summary=summary,
    )


def run_suite(manifest: Sequence[Tuple[Instance, int]], config: SuiteConfig) -> SuiteReport:
    suite_start = time.time()
    out = pathlib.Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.cache_dir:
        pathlib.Path(config.cache_dir).mkdir(parents=True, exist_ok=True)

    try:
        state = StateStore(config.checkpoint_sqlite)
    except sqlite3.OperationalError as e:
        if "locked" not in str(e).lower():
            raise
        fallback = os.path.join(tempfile.gettempdir(), f"achci_state_{int(time.time())}.sqlite")
        logger.warning(f"[suite] checkpoint locked, using temp db: {fallback}")
        state = StateStore(fallback)

    run_cfg = config.run_config()
    run_key = run_cfg.fingerprint()
    skip = state.done_keys(run_key) if config.resume else set()
    if skip:
        logger.info(f"[suite] Found {len(skip)} already finished rows.")
    if config.resume:
        stale = len(state.done_keys() - skip)
        if stale:
            logger.warning(f"[suite] {stale} checkpointed rows were produced with other settings, rerunning them")
    work = [(inst, k, run_cfg) for inst, k in manifest if (inst.name, k) not in skip]
    total = len(work)
    logger.info(f"[suite] Rows to run: {total}")

    processed = 0
    batch_start = time.time()

    def _record(name: str, k: int, row: Optional[ExperimentRow], error: Optional[str]) -> None:
        nonlocal processed
        if row is not None:
            state.upsert_row(row, run_key)
        else:
            logger.error(f"[suite] {error}")
            state.upsert_error(name, k, error or "unknown error")
        state.commit()
        processed += 1
        elapsed = time.time() - batch_start
        rate = processed / elapsed if elapsed > 0 else 0
        eta_mins = ((total - processed) / rate) / 60 if rate > 0 else 0
        logger.info(f"[suite] {processed}/{total} | rate={rate:.2f}/s | ETA={eta_mins:.1f}m")

    num_workers = config.workers or mp.cpu_count()
    num_workers = max(1, min(num_workers, total))
    try:
        if num_workers == 1:
            for item in work:
                _record(*_run_row_worker(item))
        else:
            logger.info(f"[suite] Starting {num_workers} workers...")
            with mp.Pool(processes=num_workers) as pool:
                try:
                    for result in pool.imap_unordered(_run_row_worker, work, chunksize=1):
                        _record(*result)
                except KeyboardInterrupt:
                    logger.warning(f"[suite] Interrupted by user ({processed}/{total} finished), saving progress")
                    state.commit()
                    pool.terminate()
                    pool.join()
                    raise
    except KeyboardInterrupt:
        state.commit()
        state.close()
        raise

    report = _write_reports(manifest, state, config)
    state.close()
    logger.info(
        f"[suite] Finished {report.summary['rows']} rows ({report.summary['failures']} failed) "
        f"in {(time.time() - suite_start) / 60:.1f} min"
    )
    return report
