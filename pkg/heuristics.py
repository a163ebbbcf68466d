"""
Tour construction over a (possibly non-Euclidean) cost matrix:
adapted convex hull cheapest insertion (ACHCI), nearest neighbor, and an
exhaustive oracle for small instances.

Node indices are 0-based here; files written by save_tour use 1-based ids.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import pathlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from geometry import convex_hull
from mds import Embedding2D
from shortest_paths import CostMatrix

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 12
ZERO_ARC_RTOL = 1e-12


@dataclass(frozen=True)
class Tour:
    order: Tuple[int, ...]
    cost: float
    algorithm: str = ""

    @property
    def n(self) -> int:
        return len(self.order)

    def to_json(self) -> dict:
        return {"algorithm": self.algorithm, "order": [i + 1 for i in self.order], "cost": self.cost}


def _check_permutation(order: Sequence[int], n: int) -> None:
    if len(order) != n or sorted(order) != list(range(n)):
        raise ValueError(f"tour is not a permutation of {n} nodes: {list(order)[:20]}")


def tour_cost(C: CostMatrix, order: Sequence[int]) -> float:
    """Closed tour cost: sum of C[order[r], order[r+1]] with wrap-around."""
    order = [int(i) for i in order]
    _check_permutation(order, C.n)
    idx = np.asarray(order)
    return float(C.entries[idx, np.roll(idx, -1)].sum())


def _make_tour(C: CostMatrix, order: Sequence[int], algorithm: str) -> Tour:
    order = tuple(int(i) for i in order)
    return Tour(order=order, cost=tour_cost(C, order), algorithm=algorithm)


def achci(
    C: CostMatrix,
    e: Embedding2D,
    *,
    trace: Optional[List[Tuple[int, int, int]]] = None,
) -> Tour:
    """
    Seed the subtour with the convex hull of the embedding, then repeatedly
    insert the outside node k between consecutive (i, j) minimizing
    (C_ik + C_kj) / C_ij. Only true costs are used after seeding.

    Ties go to the smallest k, then to the earliest subtour position of i.
    Arcs with C_ij below 1e-12 * max(C) are ranked by C_ik + C_kj - C_ij.
    """
    n = C.n
    if n < 3:
        raise ValueError(f"ACHCI needs at least 3 nodes, got {n}")
    if e.n != n:
        raise ValueError(f"embedding has {e.n} nodes, cost matrix has {n}")

    c = C.entries
    zero_arc = ZERO_ARC_RTOL * float(c.max())
    subtour = list(convex_hull(e.coords))
    if len(subtour) < 3:
        logger.debug(f"[achci] degenerate hull of {len(subtour)} nodes, seeding with it anyway")

    outside = np.ones(n, dtype=bool)
    outside[subtour] = False

    while len(subtour) < n:
        sub = np.asarray(subtour)
        nxt = np.roll(sub, -1)
        ks = np.nonzero(outside)[0]
        base = c[sub, nxt]
        detour = c[np.ix_(sub, ks)] + c[np.ix_(ks, nxt)].T
        with np.errstate(divide="ignore", invalid="ignore"):
            score = detour / base[:, None]
        small = base <= zero_arc
        if small.any():
            score[small] = detour[small] - base[small][:, None]

        best = score.min()
        pos_idx, k_idx = np.nonzero(score == best)
        # Lexicographic (k, position); ks is ascending so k_idx orders by k.
        pick = np.lexsort((pos_idx, k_idx))[0]
        pos, k = int(pos_idx[pick]), int(ks[k_idx[pick]])

        if trace is not None:
            trace.append((int(sub[pos]), k, int(nxt[pos])))
        subtour.insert(pos + 1, k)
        outside[k] = False

    return _make_tour(C, subtour, "achci")


def nearest_neighbor(C: CostMatrix, start: int = 0) -> Tour:
    """Greedy chain to the cheapest unvisited node (ties: lowest index), then back to start."""
    n = C.n
    if not 0 <= start < n:
        raise ValueError(f"start node {start} out of range for {n} nodes")
    c = C.entries
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    current = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, c[current])
        current = int(np.argmin(row))
        visited[current] = True
        order.append(current)
    return _make_tour(C, order, "nn")


def nearest_neighbor_best_start(C: CostMatrix) -> Tour:
    best = None
    for start in range(C.n):
        tour = nearest_neighbor(C, start)
        if best is None or tour.cost < best.cost:
            best = tour
    return Tour(order=best.order, cost=best.cost, algorithm="nn-best")


def best_of_both(C: CostMatrix, e: Embedding2D, start: int = 0) -> Tour:
    a = achci(C, e)
    b = nearest_neighbor(C, start)
    return a if a.cost <= b.cost else b


def brute_force_optimal(C: CostMatrix) -> Tour:
    """Exact optimum by enumeration with node 0 fixed first; n <= 12."""
    n = C.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n < 1:
        raise ValueError("empty cost matrix")
    if n <= 3:
        return _make_tour(C, range(n), "brute")

    c = C.entries.tolist()
    best_cost = math.inf
    best_order: Tuple[int, ...] = ()
    for perm in itertools.permutations(range(1, n)):
        # Each cycle and its reverse appear once each; keep one direction.
        if perm[0] > perm[-1]:
            continue
        cost = c[0][perm[0]] + c[perm[-1]][0]
        prev = perm[0]
        for node in perm[1:]:
            cost += c[prev][node]
            prev = node
        if cost < best_cost:
            best_cost = cost
            best_order = (0,) + perm
    return _make_tour(C, best_order, "brute")


def save_tour(tour: Tour, path: Union[str, pathlib.Path]) -> None:
    path = pathlib.Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["position", "node"])
            for pos, node in enumerate(tour.order, start=1):
                w.writerow([pos, node + 1])
    else:
        path.write_text(json.dumps(tour.to_json(), indent=2), encoding="utf-8")


def load_tour(path: Union[str, pathlib.Path], C: Optional[CostMatrix] = None) -> Tour:
    path = pathlib.Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = sorted(csv.DictReader(f), key=lambda r: int(r["position"]))
        order = [int(r["node"]) - 1 for r in rows]
        algorithm = ""
        cost = math.nan
    else:
        data = json.loads(path.read_text(encoding="utf-8"))
        order = [int(i) - 1 for i in data["order"]]
        algorithm = data.get("algorithm", "")
        cost = float(data["cost"])
    if C is not None:
        return _make_tour(C, order, algorithm)
    return Tour(order=tuple(order), cost=cost, algorithm=algorithm)
