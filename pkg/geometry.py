"""
Planar primitives: orientation, segment blocking, convex hull, centroid and
the star-shaped separator generator used to make TSPLIB instances non-Euclidean.
"""
from __future__ import annotations

import json
import logging
import math
import pathlib
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from tsplib_io import Coord, Instance

logger = logging.getLogger(__name__)

# Relative tolerance on cross products, scaled by the operand lengths.
ORIENT_EPS = 1e-12

# Separators are trimmed by this fraction at both ends.
TRIM_FRACTION = 0.05


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    a: Coord
    b: Coord

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (*self.a, *self.b)):
            raise GeometryError(f"segment has a non-finite endpoint: {self.a} - {self.b}")
        if self.a == self.b:
            raise GeometryError(f"zero-length segment at {self.a}")

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])


@dataclass(frozen=True)
class SeparatorSet:
    instance: str
    segments: Tuple[Segment, ...] = ()

    @property
    def k(self) -> int:
        return len(self.segments)

    def endpoints(self) -> np.ndarray:
        """(2k, 2) array: a0, b0, a1, b1, ..."""
        if not self.segments:
            return np.empty((0, 2), dtype=float)
        return np.array([p for s in self.segments for p in (s.a, s.b)], dtype=float)

    def to_json(self) -> dict:
        return {
            "instance": self.instance,
            "k": self.k,
            "segments": [[s.a[0], s.a[1], s.b[0], s.b[1]] for s in self.segments],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SeparatorSet":
        segments = tuple(Segment((float(ax), float(ay)), (float(bx), float(by))) for ax, ay, bx, by in data["segments"])
        if int(data.get("k", len(segments))) != len(segments):
            raise ValueError(f"separator sidecar declares k={data['k']} but lists {len(segments)} segments")
        return cls(instance=str(data["instance"]), segments=segments)


def save_separators(seps: SeparatorSet, path: Union[str, pathlib.Path]) -> None:
    pathlib.Path(path).write_text(json.dumps(seps.to_json(), indent=2), encoding="utf-8")


def load_separators(path: Union[str, pathlib.Path]) -> SeparatorSet:
    return SeparatorSet.from_json(json.loads(pathlib.Path(path).read_text(encoding="utf-8")))


def orientation(p: Sequence[float], q: Sequence[float], r: Sequence[float]) -> int:
    """Sign of the turn p -> q -> r: 1 left, -1 right, 0 collinear (within tolerance)."""
    ux, uy = q[0] - p[0], q[1] - p[1]
    vx, vy = r[0] - p[0], r[1] - p[1]
    cross = ux * vy - uy * vx
    if abs(cross) <= ORIENT_EPS * math.hypot(ux, uy) * math.hypot(vx, vy):
        return 0
    return 1 if cross > 0 else -1


def _orientation_array(px, py, qx, qy, rx, ry) -> np.ndarray:
    ux, uy = qx - px, qy - py
    vx, vy = rx - px, ry - py
    cross = ux * vy - uy * vx
    tol = ORIENT_EPS * np.hypot(ux, uy) * np.hypot(vx, vy)
    return np.where(np.abs(cross) <= tol, 0, np.sign(cross)).astype(np.int8)


def centroid(inst: Instance) -> Coord:
    pts = inst.points
    if len(pts) == 0:
        raise ValueError("centroid of an empty instance")
    c = pts.mean(axis=0)
    return float(c[0]), float(c[1])


def generate_separators(inst: Instance, k: int) -> SeparatorSet:
    """
    Star of k equiangular separators around the centroid.

    The base separator runs from the centroid towards the farthest point
    (ties: lowest index), trimmed by 5% at both ends; the others are copies
    rotated by multiples of 2*pi/k.
    """
    if k < 0:
        raise ValueError(f"separator count must be >= 0, got {k}")
    if inst.n < 2:
        raise ValueError(f"need at least 2 points to place separators, got {inst.n}")
    if k == 0:
        return SeparatorSet(instance=inst.name)

    pts = inst.points
    cx, cy = centroid(inst)
    dist = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    # Increasing distance, equal distances by decreasing index: the last entry
    # is the farthest point with the lowest index.
    order = np.lexsort((-np.arange(inst.n), dist))
    far = order[-1]
    fx, fy = pts[far, 0] - cx, pts[far, 1] - cy
    if dist[far] == 0.0:
        raise GeometryError(f"{inst.name}: all points coincide, cannot place separators")

    segments = []
    for m in range(k):
        theta = 2.0 * math.pi * m / k
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        rx, ry = fx * cos_t - fy * sin_t, fx * sin_t + fy * cos_t
        a = (cx + TRIM_FRACTION * rx, cy + TRIM_FRACTION * ry)
        b = (cx + (1.0 - TRIM_FRACTION) * rx, cy + (1.0 - TRIM_FRACTION) * ry)
        segments.append(Segment(a, b))
    return SeparatorSet(instance=inst.name, segments=tuple(segments))


def _collinear_overlap(u, v, a, b) -> bool:
    dx, dy = b[0] - a[0], b[1] - a[1]
    len2 = dx * dx + dy * dy
    tu = ((u[0] - a[0]) * dx + (u[1] - a[1]) * dy) / len2
    tv = ((v[0] - a[0]) * dx + (v[1] - a[1]) * dy) / len2
    overlap = min(max(tu, tv), 1.0) - max(min(tu, tv), 0.0)
    return overlap > ORIENT_EPS


def segments_block(path: Segment, separators: SeparatorSet) -> bool:
    """
    True iff `path` properly crosses a separator or overlaps one collinearly
    with positive length. Touching a separator tip does not block.
    """
    u, v = path.a, path.b
    min_x, max_x = min(u[0], v[0]), max(u[0], v[0])
    min_y, max_y = min(u[1], v[1]), max(u[1], v[1])
    for s in separators.segments:
        a, b = s.a, s.b
        if max(a[0], b[0]) < min_x or min(a[0], b[0]) > max_x:
            continue
        if max(a[1], b[1]) < min_y or min(a[1], b[1]) > max_y:
            continue
        d1 = orientation(a, b, u)
        d2 = orientation(a, b, v)
        if d1 == 0 and d2 == 0:
            if _collinear_overlap(u, v, a, b):
                return True
            continue
        if d1 * d2 >= 0:
            continue
        d3 = orientation(u, v, a)
        d4 = orientation(u, v, b)
        if d3 * d4 < 0:
            return True
    return False


def blocked_pairs(points: np.ndarray, separators: SeparatorSet) -> np.ndarray:
    """
    Symmetric (V, V) boolean matrix: entry (i, j) is segments_block(points[i]-points[j]).
    Only pairs on opposite sides of a separator line (or both on it) are tested further.
    """
    pts = np.asarray(points, dtype=float)
    nv = len(pts)
    blocked = np.zeros((nv, nv), dtype=bool)
    px, py = pts[:, 0], pts[:, 1]
    for s in separators.segments:
        (ax, ay), (bx, by) = s.a, s.b
        side = _orientation_array(ax, ay, bx, by, px, py)

        cross_i, cross_j = np.nonzero(side[:, None] * side[None, :] < 0)
        keep = cross_i < cross_j
        cross_i, cross_j = cross_i[keep], cross_j[keep]
        if len(cross_i):
            ux, uy, vx, vy = px[cross_i], py[cross_i], px[cross_j], py[cross_j]
            d3 = _orientation_array(ux, uy, vx, vy, ax, ay)
            d4 = _orientation_array(ux, uy, vx, vy, bx, by)
            hit = d3.astype(np.int16) * d4 < 0
            blocked[cross_i[hit], cross_j[hit]] = True

        on_line = np.nonzero(side == 0)[0]
        if len(on_line) > 1:
            dx, dy = bx - ax, by - ay
            t = ((px[on_line] - ax) * dx + (py[on_line] - ay) * dy) / (dx * dx + dy * dy)
            lo = np.maximum(np.minimum(t[:, None], t[None, :]), 0.0)
            hi = np.minimum(np.maximum(t[:, None], t[None, :]), 1.0)
            ii, jj = np.nonzero(hi - lo > ORIENT_EPS)
            blocked[on_line[ii], on_line[jj]] = True

    blocked |= blocked.T
    np.fill_diagonal(blocked, False)
    return blocked


def points_on_separators(points: np.ndarray, separators: SeparatorSet) -> List[Tuple[int, int]]:
    """(point index, separator index) pairs where a point lies strictly inside a separator."""
    pts = np.asarray(points, dtype=float)
    hits = []
    for si, s in enumerate(separators.segments):
        (ax, ay), (bx, by) = s.a, s.b
        side = _orientation_array(ax, ay, bx, by, pts[:, 0], pts[:, 1])
        dx, dy = bx - ax, by - ay
        t = ((pts[:, 0] - ax) * dx + (pts[:, 1] - ay) * dy) / (dx * dx + dy * dy)
        inside = (side == 0) & (t > ORIENT_EPS) & (t < 1.0 - ORIENT_EPS)
        hits.extend((int(pi), si) for pi in np.nonzero(inside)[0])
    return hits


def convex_hull(points: Sequence[Sequence[float]]) -> List[int]:
    """
    Monotone-chain hull. Returns indices counterclockwise from the
    lexicographically smallest point; points on hull edges are dropped.
    All-collinear input gives the two extreme points, one distinct point gives itself.
    """
    pts = [(float(p[0]), float(p[1])) for p in points]
    if not pts:
        raise ValueError("convex hull of an empty point set")

    # Coincident points collapse to their lowest index.
    seen = {}
    for i, p in enumerate(pts):
        seen.setdefault(p, i)
    order = sorted(seen.values(), key=lambda i: (pts[i], i))
    if len(order) < 3:
        return order

    def chain(indices):
        out: List[int] = []
        for i in indices:
            while len(out) >= 2 and orientation(pts[out[-2]], pts[out[-1]], pts[i]) <= 0:
                out.pop()
            out.append(i)
        return out

    lower = chain(order)
    upper = chain(reversed(order))
    return lower[:-1] + upper[:-1]
