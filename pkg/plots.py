"""
SVG figures for suite results, tours and embeddings.

Figures are rendered with matplotlib's SVG backend. The hash salt is fixed
and the date metadata dropped, so identical inputs give identical files.
"""
from __future__ import annotations

import logging
import pathlib
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from geometry import SeparatorSet  # noqa: E402
from heuristics import Tour  # noqa: E402
from mds import Embedding2D  # noqa: E402
from shortest_paths import build_visibility_graph, tour_polylines  # noqa: E402
from tsplib_io import Instance  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "achci"
plt.rcParams["svg.fonttype"] = "none"

PathLike = Union[str, pathlib.Path]


def _rows(rows: Union[pd.DataFrame, PathLike]) -> pd.DataFrame:
    return rows if isinstance(rows, pd.DataFrame) else pd.read_csv(rows)


def _save(fig, path: PathLike) -> str:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"[plots] wrote {path}")
    return str(path)


def _cost_ratio(df: pd.DataFrame) -> pd.Series:
    return df["achci_cost"] / df["nn_cost"]


def plot_ratio_vs_df(rows: Union[pd.DataFrame, PathLike], path: PathLike) -> str:
    """ACHCI/NN cost ratio against deviation factor, one marker per row."""
    df = _rows(rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ratio = _cost_ratio(df)
    wins = ratio < 1.0
    ax.scatter(df.loc[wins, "df"], ratio[wins], s=14, color="tab:blue", label="ACHCI better")
    ax.scatter(df.loc[~wins, "df"], ratio[~wins], s=14, color="tab:red", label="NN better or equal")
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("deviation factor")
    ax.set_ylabel("ACHCI cost / NN cost")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_ratio_histogram(rows: Union[pd.DataFrame, PathLike], path: PathLike, *, bins: int = 20) -> str:
    df = _rows(rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(_cost_ratio(df), bins=bins, color="tab:blue", edgecolor="white")
    ax.axvline(1.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("ACHCI cost / NN cost")
    ax.set_ylabel("rows")
    return _save(fig, path)


def plot_runtime(rows: Union[pd.DataFrame, PathLike], path: PathLike) -> Optional[str]:
    """
    Log-log runtime against n for both heuristics. The ACHCI legend entry
    carries the fitted slope. Returns None when no timings were recorded.
    """
    from bench import runtime_fit_exponent

    df = _rows(rows).dropna(subset=["nn_time_s", "achci_time_s"])
    if df.empty:
        logger.info("[plots] no timings recorded, skipping runtime plot")
        return None

    per_n = df.groupby("n", sort=True)[["nn_time_s", "achci_time_s"]].mean()
    slope = runtime_fit_exponent(df["n"], df["achci_time_s"])
    label = "ACHCI" if slope is None else f"ACHCI (slope {slope:.2f})"

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(per_n.index, per_n["nn_time_s"], "o-", color="tab:red", label="NN")
    ax.loglog(per_n.index, per_n["achci_time_s"], "s-", color="tab:blue", label=label)
    ax.set_xlabel("n")
    ax.set_ylabel("time [s]")
    ax.legend(loc="best")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def _draw_separators(ax, seps: Optional[SeparatorSet]) -> None:
    if seps is None:
        return
    for s in seps.segments:
        ax.plot([s.a[0], s.b[0]], [s.a[1], s.b[1]], color="black", linewidth=2.0)


def plot_tour(
    inst: Instance,
    seps: Optional[SeparatorSet],
    tour: Tour,
    path: PathLike,
    *,
    hull: Sequence[int] = (),
) -> str:
    """
    Tour over points and separators. With separators each arc follows its
    shortest path, bending at separator tips; without them arcs are straight.
    """
    pts = inst.points
    fig, ax = plt.subplots(figsize=(6, 6))
    if seps is not None and seps.k:
        g = build_visibility_graph(inst, seps)
        for line in tour_polylines(g, tour.order):
            ax.plot(line[:, 0], line[:, 1], color="tab:blue", linewidth=0.8, zorder=1)
    else:
        order = np.asarray(tour.order + tour.order[:1])
        ax.plot(pts[order, 0], pts[order, 1], color="tab:blue", linewidth=0.8, zorder=1)
    ax.scatter(pts[:, 0], pts[:, 1], s=10, color="tab:gray", zorder=2)
    if len(hull):
        h = np.asarray(hull)
        ax.scatter(pts[h, 0], pts[h, 1], s=18, color="tab:orange", zorder=3, label="hull seed")
        ax.legend(loc="best")
    _draw_separators(ax, seps)
    ax.set_title(f"{inst.name} {tour.algorithm} cost={tour.cost:.1f}")
    ax.set_aspect("equal")
    return _save(fig, path)


def plot_embedding(e: Embedding2D, hull: Sequence[int], path: PathLike, *, title: str = "") -> str:
    """Embedded points with the convex hull closed as a polygon."""
    xy = e.coords
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(xy[:, 0], xy[:, 1], s=10, color="tab:gray")
    if len(hull):
        h = np.asarray(list(hull) + [hull[0]])
        ax.plot(xy[h, 0], xy[h, 1], color="tab:orange", linewidth=1.2)
    ax.set_title(title or f"embedding (top eigenvalues {e.eigenvalues[0]:.3g}, {e.eigenvalues[1]:.3g})")
    ax.set_aspect("equal")
    return _save(fig, path)


def write_suite_plots(rows_csv: PathLike, out_dir: PathLike) -> List[str]:
    out = pathlib.Path(out_dir)
    rows = pd.read_csv(rows_csv)
    if rows.empty:
        return []
    written = [
        plot_ratio_vs_df(rows, out / "ratio_vs_df.svg"),
        plot_ratio_histogram(rows, out / "ratio_histogram.svg"),
    ]
    runtime = plot_runtime(rows, out / "runtime.svg")
    if runtime:
        written.append(runtime)
    return written
