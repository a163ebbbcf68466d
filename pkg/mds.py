"""
Classical MDS anchored at node 1.

Node 1 is the origin; the Gram matrix of the other n-1 nodes comes from the
law-of-cosines identity on squared costs, and the two leading eigenpairs give
planar coordinates whose distances approximate the costs.
"""
from __future__ import annotations

import logging
import pathlib
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from shortest_paths import CostMatrix

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
ZERO_EIGEN_RTOL = 1e-12


class EigensolverError(RuntimeError):
    def __init__(self, message: str, residual: float) -> None:
        self.residual = residual
        super().__init__(f"{message} (relative residual {residual:.3e})")


@dataclass(frozen=True, eq=False)
class GramMatrix:
    m: np.ndarray  # (n-1, n-1)

    @property
    def size(self) -> int:
        return int(self.m.shape[0])


@dataclass(frozen=True)
class SpectrumSummary:
    negative_count: int
    negative_mass: float
    residual: float


@dataclass(frozen=True, eq=False)
class Embedding2D:
    coords: np.ndarray  # (n, 2), row 0 is the origin node
    eigenvalues: Tuple[float, float]
    spectrum: SpectrumSummary

    @property
    def n(self) -> int:
        return int(self.coords.shape[0])


def gram_from_costs(C: CostMatrix) -> GramMatrix:
    if C.n < 3:
        raise ValueError(f"MDS needs at least 3 nodes, got {C.n}")
    sq = C.entries ** 2
    to_origin = sq[1:, 0]
    from_origin = sq[0, 1:]
    m = (to_origin[:, None] + from_origin[None, :] - sq[1:, 1:]) / 2.0
    return GramMatrix(m)


def embed_2d(M: GramMatrix) -> Embedding2D:
    m = M.m
    if not np.allclose(m, m.T, rtol=1e-9, atol=1e-9 * max(float(np.abs(m).max()), 1.0)):
        raise ValueError("Gram matrix is not symmetric")

    try:
        evals, evecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as e:
        raise EigensolverError(f"eigendecomposition did not converge: {e}", float("nan")) from e

    norm = np.linalg.norm(m)
    residual = float(np.linalg.norm(m - (evecs * evals) @ evecs.T) / norm) if norm > 0 else 0.0
    if not residual < RESIDUAL_TOL:
        raise EigensolverError("eigendecomposition is inaccurate", residual)

    idx = np.argsort(evals, kind="stable")[::-1]
    evals = evals[idx]
    evecs = evecs[:, idx]

    negative = evals < 0.0
    summary = SpectrumSummary(
        negative_count=int(negative.sum()),
        negative_mass=float(-evals[negative].sum()),
        residual=residual,
    )
    if summary.negative_count:
        logger.debug(
            f"[mds] clamped {summary.negative_count} negative eigenvalues (mass {summary.negative_mass:.3g})"
        )

    scale = float(np.abs(evals).max()) if len(evals) else 0.0
    evals = np.where(np.abs(evals) <= ZERO_EIGEN_RTOL * scale, 0.0, np.maximum(evals, 0.0))

    top = np.zeros(2)
    vecs = np.zeros((m.shape[0], 2))
    keep = min(2, len(evals))
    top[:keep] = evals[:keep]
    vecs[:, :keep] = evecs[:, :keep]
    for col in range(2):
        nonzero = np.nonzero(np.abs(vecs[:, col]) > 1e-12)[0]
        if len(nonzero) and vecs[nonzero[0], col] < 0:
            vecs[:, col] = -vecs[:, col]

    projected = vecs * np.sqrt(top)[None, :]
    coords = np.vstack([np.zeros((1, 2)), projected])
    return Embedding2D(coords=coords, eigenvalues=(float(top[0]), float(top[1])), spectrum=summary)


def embed_costs(C: CostMatrix) -> Embedding2D:
    return embed_2d(gram_from_costs(C))


def embedding_stress(C: CostMatrix, e: Embedding2D) -> float:
    """sqrt( sum (|e_i - e_j| - C_ij)^2 / sum C_ij^2 ) over i < j."""
    if C.n != e.n:
        raise ValueError(f"cost matrix has {C.n} nodes, embedding has {e.n}")
    iu, ju = np.triu_indices(C.n, k=1)
    diff = e.coords[iu] - e.coords[ju]
    embedded = np.hypot(diff[:, 0], diff[:, 1])
    target = C.entries[iu, ju]
    denom = float(np.sum(target ** 2))
    if denom == 0.0:
        return 0.0
    return float(np.sqrt(np.sum((embedded - target) ** 2) / denom))


def write_embedding_csv(e: Embedding2D, path: Union[str, pathlib.Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("index,x,y\n")
        for i, (x, y) in enumerate(e.coords, start=1):
            f.write(f"{i},{float(x)!r},{float(y)!r}\n")
