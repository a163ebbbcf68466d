"""
True shortest-path costs around impassable separators.

The visibility graph joins every pair of vertices (instance points, then
separator endpoints) whose straight segment is not blocked. Costs between
instance points come from one Dijkstra run per source.
"""
from __future__ import annotations

import hashlib
import heapq
import logging
import math
import multiprocessing as mp
import os
import pathlib
import tempfile
import time
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from geometry import GeometryError, SeparatorSet, blocked_pairs, points_on_separators
from tsplib_io import Instance

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-9

# Per-source progress is logged about this many times per matrix.
PROGRESS_STEPS = 10


class DisconnectedCostsError(ValueError):
    pass


class DuplicatePointsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    def __getitem__(self, idx):
        return self.entries[idx]

    def validate(self, *, check_triangle: bool = False) -> None:
        c = self.entries
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix has non-finite entries")
        if np.any(np.diag(c) != 0.0):
            raise ValueError("cost matrix diagonal must be zero")
        if np.any(c < 0.0):
            raise ValueError("cost matrix has negative entries")
        scale = max(float(c.max()), 1.0)
        if not np.allclose(c, c.T, rtol=SYMMETRY_RTOL, atol=SYMMETRY_RTOL * scale):
            raise ValueError("cost matrix is not symmetric")
        if check_triangle:
            for k in range(self.n):
                via = c[:, k][:, None] + c[k, :][None, :]
                if np.any(c > via + SYMMETRY_RTOL * scale):
                    raise ValueError(f"triangle inequality violated through node {k + 1}")


@dataclass(frozen=True, eq=False)
class VisibilityGraph:
    vertices: np.ndarray  # (n + 2k, 2): instance points first
    weights: np.ndarray  # (V, V) Euclidean length, inf where blocked
    n_points: int

    @property
    def size(self) -> int:
        return int(self.vertices.shape[0])

    def has_edge(self, u: int, v: int) -> bool:
        return u != v and math.isfinite(self.weights[u, v])

    def edges(self) -> Iterator[Tuple[int, int, float]]:
        ii, jj = np.nonzero(np.isfinite(self.weights))
        for u, v in zip(ii.tolist(), jj.tolist()):
            if u < v:
                yield u, v, float(self.weights[u, v])


def euclidean_matrix(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.hypot(pts[:, 0][:, None] - pts[:, 0][None, :], pts[:, 1][:, None] - pts[:, 1][None, :])


def build_visibility_graph(inst: Instance, seps: SeparatorSet) -> VisibilityGraph:
    pts = inst.points
    inside = points_on_separators(pts, seps)
    if inside:
        pi, si = inside[0]
        raise GeometryError(
            f"{inst.name}: node {pi + 1} at {inst.coords[pi]} lies inside separator {si + 1}; path cost is undefined"
        )
    vertices = np.vstack([pts, seps.endpoints()])
    weights = euclidean_matrix(vertices)
    if seps.k:
        weights[blocked_pairs(vertices, seps)] = np.inf
    return VisibilityGraph(vertices=vertices, weights=weights, n_points=inst.n)


def _dijkstra(weights: np.ndarray, source: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Binary-heap Dijkstra over the whole visibility graph. Returns distances and
    predecessors (-1 for the source and unreachable vertices) for every vertex.
    Instance points are relaxed like separator endpoints: on a separator's line
    a path may have to pass through another instance point.
    """
    dist = np.full(len(weights), np.inf)
    dist[source] = 0.0
    pred = np.full(len(weights), -1, dtype=np.int64)
    done = np.zeros(len(weights), dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        relaxed = d + weights[u]
        improved = np.nonzero((relaxed < dist) & ~done)[0]
        if len(improved) == 0:
            continue
        dist[improved] = relaxed[improved]
        pred[improved] = u
        for v in improved.tolist():
            heapq.heappush(heap, (float(dist[v]), v))
    return dist, pred


_WORKER_WEIGHTS: Optional[np.ndarray] = None


def _init_worker(weights: np.ndarray) -> None:
    global _WORKER_WEIGHTS
    _WORKER_WEIGHTS = weights


def _dijkstra_worker(args: Tuple[List[int], int]) -> List[Tuple[int, np.ndarray]]:
    sources, n = args
    return [(s, _dijkstra(_WORKER_WEIGHTS, s)[0][:n]) for s in sources]


def _log_sources(done: int, total: int, started: float) -> None:
    elapsed = time.time() - started
    rate = done / elapsed if elapsed > 0 else 0
    eta_mins = ((total - done) / rate) / 60 if rate > 0 else 0
    logger.debug(f"[dijkstra] {done}/{total} | rate={rate:.1f}/s | ETA={eta_mins:.1f}m")


def all_pairs_costs(g: VisibilityGraph, n: Optional[int] = None, *, workers: int = 1) -> CostMatrix:
    n = g.n_points if n is None else n
    if n > g.n_points:
        raise ValueError(f"graph has only {g.n_points} instance points, asked for {n}")
    costs = np.empty((n, n), dtype=float)
    started = time.time()
    every = max(1, n // PROGRESS_STEPS)

    if workers <= 1 or n < 2 * workers:
        for s in range(n):
            costs[s] = _dijkstra(g.weights, s)[0][:n]
            if (s + 1) % every == 0 or s + 1 == n:
                _log_sources(s + 1, n, started)
    else:
        size = max(1, every // workers)
        chunks = [(list(range(i, min(i + size, n))), n) for i in range(0, n, size)]
        done = 0
        with mp.Pool(processes=workers, initializer=_init_worker, initargs=(g.weights,)) as pool:
            for results in pool.imap_unordered(_dijkstra_worker, chunks):
                for s, row in results:
                    costs[s] = row
                done += len(results)
                _log_sources(done, n, started)

    unreachable = np.argwhere(~np.isfinite(costs))
    if len(unreachable):
        i, j = unreachable[0]
        raise DisconnectedCostsError(f"node {j + 1} is unreachable from node {i + 1}")

    costs = np.minimum(costs, costs.T)
    np.fill_diagonal(costs, 0.0)
    return CostMatrix(costs)


def shortest_path(g: VisibilityGraph, source: int, target: int) -> List[int]:
    """Vertex indices of one shortest polyline from source to target, both included."""
    dist, pred = _dijkstra(g.weights, source)
    if not math.isfinite(dist[target]):
        raise DisconnectedCostsError(f"node {target + 1} is unreachable from node {source + 1}")
    path = [target]
    while path[-1] != source:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def tour_polylines(g: VisibilityGraph, order: Sequence[int]) -> List[np.ndarray]:
    """One (m, 2) coordinate array per tour arc, bending at separator tips."""
    out = []
    for r, i in enumerate(order):
        j = order[(r + 1) % len(order)]
        out.append(g.vertices[shortest_path(g, i, j)])
    return out


def deviation_factor(C: CostMatrix, inst: Instance) -> float:
    """Mean of true-path / straight-line length over all unordered pairs."""
    if C.n != inst.n:
        raise ValueError(f"cost matrix is {C.n}x{C.n} but instance has {inst.n} points")
    if inst.n < 2:
        raise ValueError("deviation factor needs at least 2 points")
    delta = euclidean_matrix(inst.points)
    iu, ju = np.triu_indices(inst.n, k=1)
    straight = delta[iu, ju]
    zero = np.nonzero(straight == 0.0)[0]
    if len(zero):
        i, j = iu[zero[0]], ju[zero[0]]
        raise DuplicatePointsError(f"{inst.name}: nodes {i + 1} and {j + 1} coincide at {inst.coords[i]}")
    df = float(np.mean(C.entries[iu, ju] / straight))
    if df < 1.0 - 1e-9:
        raise ValueError(f"{inst.name}: deviation factor {df} below 1, costs are shorter than straight lines")
    return df


def compute_costs(inst: Instance, seps: SeparatorSet, *, workers: int = 1) -> CostMatrix:
    t0 = time.perf_counter()
    g = build_visibility_graph(inst, seps)
    costs = all_pairs_costs(g, inst.n, workers=workers)
    logger.debug(
        f"[costs] {inst.name} k={seps.k}: {g.size} vertices, {time.perf_counter() - t0:.2f}s"
    )
    return costs


def _fingerprint(inst: Instance, seps: SeparatorSet) -> str:
    h = hashlib.sha1()
    h.update(inst.points.tobytes())
    h.update(seps.endpoints().tobytes())
    return h.hexdigest()


def cache_path(cache_dir: Union[str, pathlib.Path], name: str, k: int) -> pathlib.Path:
    return pathlib.Path(cache_dir) / f"{name}_k{k}.parquet"


def save_cost_matrix(C: CostMatrix, path: Union[str, pathlib.Path], *, metadata: Optional[dict] = None) -> None:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {b"n": str(C.n).encode()}
    for key, value in (metadata or {}).items():
        meta[key.encode()] = str(value).encode()
    table = pa.table({"cost": pa.array(C.entries.ravel(), type=pa.float64())})
    table = table.replace_schema_metadata(meta)
    fd, tmp = tempfile.mkstemp(suffix=".parquet", dir=str(path.parent))
    os.close(fd)
    try:
        pq.write_table(table, tmp, compression="zstd")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_cost_matrix(path: Union[str, pathlib.Path]) -> Tuple[CostMatrix, dict]:
    table = pq.read_table(str(path))
    meta = {k.decode(): v.decode() for k, v in (table.schema.metadata or {}).items() if not k.startswith(b"ARROW:")}
    n = int(meta["n"])
    values = table.column("cost").to_numpy()
    if len(values) != n * n:
        raise ValueError(f"{path}: expected {n * n} costs, found {len(values)}")
    return CostMatrix(values.reshape(n, n).copy()), meta


def cached_costs(
    inst: Instance,
    seps: SeparatorSet,
    cache_dir: Optional[Union[str, pathlib.Path]] = None,
    *,
    workers: int = 1,
) -> CostMatrix:
    """compute_costs with an on-disk cache keyed by (instance, k)."""
    if cache_dir is None:
        return compute_costs(inst, seps, workers=workers)

    path = cache_path(cache_dir, inst.name, seps.k)
    fingerprint = _fingerprint(inst, seps)
    if path.exists():
        try:
            C, meta = load_cost_matrix(path)
            if meta.get("fingerprint") == fingerprint:
                return C
            logger.warning(f"[cache] {path.name} was built from different coordinates, recomputing")
        except Exception as e:
            logger.warning(f"[cache] could not read {path}: {type(e).__name__}: {e}")

    C = compute_costs(inst, seps, workers=workers)
    save_cost_matrix(C, path, metadata={"instance": inst.name, "k": seps.k, "fingerprint": fingerprint})
    return C


def write_cost_matrix_csv(C: CostMatrix, path: Union[str, pathlib.Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{C.n}\n")
        for row in C.entries:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_cost_matrix_csv(path: Union[str, pathlib.Path]) -> CostMatrix:
    with open(path, "r", encoding="utf-8") as f:
        n = int(f.readline())
        rows = [[float(v) for v in line.split(",")] for line in f if line.strip()]
    entries = np.array(rows, dtype=float)
    if entries.shape != (n, n):
        raise ValueError(f"{path}: header says n={n} but found shape {entries.shape}")
    return CostMatrix(entries)
