"""
Main entry point for the ACHCI toolkit.

Single-instance commands (parse, gen-separators, costs, embed, solve) work on
one TSPLIB file; `bench` runs a YAML-configured suite and `plot` redraws the
suite figures from an existing rows.csv.
"""
import argparse
import logging
import multiprocessing as mp
import pathlib
import sys
from dataclasses import replace
from datetime import datetime
from typing import List, Optional

from dotenv import load_dotenv

from bench import build_manifest, load_config, run_suite
from geometry import convex_hull, generate_separators, load_separators, save_separators
from heuristics import achci, best_of_both, brute_force_optimal, nearest_neighbor, nearest_neighbor_best_start, save_tour
from mds import embed_costs, embedding_stress, write_embedding_csv
from shortest_paths import cached_costs, deviation_factor, write_cost_matrix_csv
from tsplib_io import load_instance, save_instance

load_dotenv(dotenv_path=pathlib.Path(__file__).resolve().parent / ".env")

logger = logging.getLogger(__name__)

SUITE_OUTPUTS = [
    "rows.csv",
    "diagnostics.csv",
    "failures.csv",
    "summary.json",
    "ratio_vs_df.svg",
    "ratio_histogram.svg",
    "runtime.svg",
    "checkpoint.sqlite",
]


def _separators(args, inst):
    if getattr(args, "separators", None):
        seps = load_separators(args.separators)
        if seps.instance != inst.name:
            logger.warning(f"[separators] sidecar is for {seps.instance}, instance is {inst.name}")
        return seps
    return generate_separators(inst, args.k)


def _costs(args, inst):
    seps = _separators(args, inst)
    C = cached_costs(inst, seps, args.cache_dir, workers=args.workers or 1)
    return seps, C


def cmd_parse(args) -> None:
    """Summarize a TSPLIB file, optionally re-serializing it."""
    inst = load_instance(args.file)
    pts = inst.points
    logger.info(
        f"[parse] {inst.name}: n={inst.n} type={inst.edge_weight_type} "
        f"x=[{pts[:, 0].min():g}, {pts[:, 0].max():g}] y=[{pts[:, 1].min():g}, {pts[:, 1].max():g}]"
    )
    if args.out:
        save_instance(inst, args.out)
        logger.info(f"[parse] wrote {args.out}")


def cmd_gen_separators(args) -> None:
    inst = load_instance(args.file)
    seps = generate_separators(inst, args.k)
    out = args.out or f"{inst.name}_k{args.k}.separators.json"
    save_separators(seps, out)
    logger.info(f"[separators] {inst.name}: {seps.k} separators -> {out}")


def cmd_costs(args) -> None:
    inst = load_instance(args.file)
    _, C = _costs(args, inst)
    logger.info(f"[costs] {inst.name} k={args.k}: deviation factor {deviation_factor(C, inst):.4f}")
    if args.out:
        write_cost_matrix_csv(C, args.out)
        logger.info(f"[costs] wrote {args.out}")


def cmd_embed(args) -> None:
    inst = load_instance(args.file)
    seps, C = _costs(args, inst)
    e = embed_costs(C)
    hull = convex_hull(e.coords)
    logger.info(
        f"[embed] {inst.name} k={args.k}: eigenvalues ({e.eigenvalues[0]:.4g}, {e.eigenvalues[1]:.4g}), "
        f"{e.spectrum.negative_count} negative, stress {embedding_stress(C, e):.4f}, hull {len(hull)} nodes"
    )
    if args.out:
        write_embedding_csv(e, args.out)
        logger.info(f"[embed] wrote {args.out}")
    if args.svg:
        from plots import plot_embedding

        plot_embedding(e, hull, args.svg, title=f"{inst.name} k={seps.k}")


def cmd_solve(args) -> None:
    inst = load_instance(args.file)
    seps, C = _costs(args, inst)
    hull = ()
    if args.algo == "nn":
        if args.nn_start == "best":
            tour = nearest_neighbor_best_start(C)
        else:
            tour = nearest_neighbor(C, int(args.nn_start) - 1)
    elif args.algo == "brute":
        tour = brute_force_optimal(C)
    else:
        e = embed_costs(C)
        hull = tuple(convex_hull(e.coords))
        tour = achci(C, e) if args.algo == "achci" else best_of_both(C, e)
    logger.info(f"[solve] {inst.name} k={seps.k} {tour.algorithm}: cost {tour.cost:.4f}")
    if args.out:
        save_tour(tour, args.out)
        logger.info(f"[solve] wrote {args.out}")
    if args.svg:
        from plots import plot_tour

        plot_tour(inst, seps, tour, args.svg, hull=hull)


def _clean_outputs(output_dir: pathlib.Path) -> None:
    old_files = [output_dir / name for name in SUITE_OUTPUTS if (output_dir / name).exists()]
    if not old_files:
        return
    logger.info("Cleaning old output files (--clean-output flag set)...")
    for f in old_files:
        mod_time = datetime.fromtimestamp(f.stat().st_mtime).strftime("%Y-%m-%d %H:%M:%S")
        try:
            f.unlink()
            logger.info(f"  [OK] Deleted: {f} (last modified: {mod_time})")
        except OSError as e:
            logger.warning(f"  [WARN] Could not delete {f}: {e}")


def cmd_bench(args) -> None:
    config = load_config(args.config)
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.no_resume:
        overrides["resume"] = False
    if args.no_plots:
        overrides["plots"] = False
    config = replace(config, **overrides)

    logger.info("=" * 80)
    logger.info(f"ACHCI BENCHMARK SUITE ({args.config})")
    logger.info("=" * 80)

    output_dir = pathlib.Path(config.output_dir)
    if args.clean_output:
        _clean_outputs(output_dir)

    logger.info("[STEP 1] Building manifest...")
    manifest = build_manifest(config)

    logger.info(f"[STEP 2] Running {len(manifest)} rows (workers={config.workers or mp.cpu_count()})...")
    try:
        report = run_suite(manifest, config)
    except KeyboardInterrupt:
        logger.warning("")
        logger.warning("Suite interrupted by user (Ctrl+C)")
        logger.info(f"Progress saved to checkpoint: {config.checkpoint_sqlite}")
        logger.info("You can resume by running the same command again.")
        raise

    logger.info("[STEP 3] Summary")
    logger.info("-" * 80)
    for key, value in sorted(report.summary.items()):
        logger.info(f"  {key}: {value}")
    logger.info(f"Rows: {report.rows_csv}")
    logger.info(f"Failures: {report.failures_csv}")


def cmd_plot(args) -> None:
    from plots import write_suite_plots

    out_dir = args.out_dir or str(pathlib.Path(args.rows).parent)
    written = write_suite_plots(args.rows, out_dir)
    logger.info(f"[plots] {len(written)} figures in {out_dir}")


def _nn_start(value: str) -> str:
    value = value.strip().lower()
    if value == "best" or (value.isdigit() and int(value) >= 1):
        return value
    raise argparse.ArgumentTypeError("expected a 1-based node id or 'best'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="ACHCI toolkit for TSPs with separator-induced non-Euclidean costs",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Inspect an instance
  python run.py parse tsplib/berlin52.tsp

  # Solve berlin52 with 8 separators and draw the tour
  python run.py solve tsplib/berlin52.tsp --k 8 --algo achci --svg berlin52_k8.svg

  # Run the desk-scale suite
  python run.py bench --config configs/table1_small.yaml --workers 8

  # Redraw figures from an existing run
  python run.py plot --rows results/rows.csv
        """,
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level (default: INFO)"
    )
    subparsers = parser.add_subparsers(dest="command", required=True, help="Command to run")

    def _instance_args(p, *, needs_k: bool = True) -> None:
        p.add_argument("file", help="TSPLIB .tsp file")
        if needs_k:
            p.add_argument("--k", type=int, default=0, help="Number of separators (default: 0)")

    def _cost_args(p) -> None:
        p.add_argument("--separators", default=None, help="Separator JSON sidecar (overrides --k)")
        p.add_argument("--cache-dir", default=None, help="Parquet cost-matrix cache directory")
        p.add_argument("--workers", type=int, default=1, help="Dijkstra worker processes (default: 1)")

    p_parse = subparsers.add_parser("parse", help="Summarize and optionally re-serialize a TSPLIB file")
    _instance_args(p_parse, needs_k=False)
    p_parse.add_argument("--out", default=None)
    p_parse.set_defaults(func=cmd_parse)

    p_sep = subparsers.add_parser("gen-separators", help="Write the separator set for k as JSON")
    _instance_args(p_sep)
    p_sep.add_argument("--out", default=None)
    p_sep.set_defaults(func=cmd_gen_separators)

    p_costs = subparsers.add_parser("costs", help="Compute the true cost matrix")
    _instance_args(p_costs)
    _cost_args(p_costs)
    p_costs.add_argument("--out", default=None, help="CSV output")
    p_costs.set_defaults(func=cmd_costs)

    p_embed = subparsers.add_parser("embed", help="2-D MDS embedding of the true costs")
    _instance_args(p_embed)
    _cost_args(p_embed)
    p_embed.add_argument("--out", default=None, help="CSV output (index,x,y)")
    p_embed.add_argument("--svg", default=None)
    p_embed.set_defaults(func=cmd_embed)

    p_solve = subparsers.add_parser("solve", help="Build a tour")
    _instance_args(p_solve)
    _cost_args(p_solve)
    p_solve.add_argument("--algo", choices=["achci", "nn", "brute", "best"], default="achci")
    p_solve.add_argument("--nn-start", type=_nn_start, default="1", help="1-based NN start node or 'best'")
    p_solve.add_argument("--out", default=None, help="Tour output (.json or .csv)")
    p_solve.add_argument("--svg", default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_bench = subparsers.add_parser("bench", help="Run a benchmark suite from a YAML config")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--workers", type=int, default=None, help=f"Number of workers (default: {mp.cpu_count()})")
    p_bench.add_argument("--output-dir", default=None)
    p_bench.add_argument("--clean-output", action="store_true", help="Delete previous reports and checkpoint first")
    p_bench.add_argument("--no-resume", action="store_true", help="Rerun rows already in the checkpoint")
    p_bench.add_argument("--no-plots", action="store_true")
    p_bench.set_defaults(func=cmd_bench)

    p_plot = subparsers.add_parser("plot", help="Draw suite figures from rows.csv")
    p_plot.add_argument("--rows", required=True)
    p_plot.add_argument("--out-dir", default=None)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format='[%(asctime)s] [%(levelname)s] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
    )
    args = build_parser().parse_args(argv)
    logging.getLogger().setLevel(getattr(logging, args.log_level))

    try:
        args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        logger.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
