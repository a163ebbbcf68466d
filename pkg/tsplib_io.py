"""
TSPLIB instance reading and writing.

Coordinates are kept exactly as written in the file (no nint/ceil rounding):
separators and shortest paths are computed on the raw geometry.
"""
from __future__ import annotations

import io
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import IO, List, Optional, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Coord = Tuple[float, float]

# Edge-weight types whose coordinates are planar (x, y) pairs.
PLANAR_EDGE_WEIGHT_TYPES = {"EUC_2D", "CEIL_2D", "ATT", "MAN_2D", "MAX_2D"}

_HEADER_KEYS = {
    "NAME",
    "TYPE",
    "COMMENT",
    "DIMENSION",
    "EDGE_WEIGHT_TYPE",
    "CAPACITY",
    "NODE_COORD_TYPE",
    "DISPLAY_DATA_TYPE",
}


class TSPLIBParseError(ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None) -> None:
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{prefix}{message}")


@dataclass(frozen=True)
class Instance:
    name: str
    coords: Tuple[Coord, ...]
    edge_weight_type: str = field(default="EUC_2D", compare=False)
    comment: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        for i, (x, y) in enumerate(self.coords):
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"node {i + 1} has a non-finite coordinate ({x}, {y})")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def points(self) -> np.ndarray:
        """(n, 2) float array of the coordinates."""
        return np.asarray(self.coords, dtype=float).reshape(-1, 2)

    @classmethod
    def from_points(cls, name: str, points, **kwargs) -> "Instance":
        coords = tuple((float(x), float(y)) for x, y in np.asarray(points, dtype=float).reshape(-1, 2))
        return cls(name=name, coords=coords, **kwargs)


def _split_header(line: str) -> Tuple[str, str]:
    if ":" in line:
        key, value = line.split(":", 1)
        return key.strip().upper(), value.strip()
    parts = line.split(None, 1)
    return parts[0].upper(), (parts[1].strip() if len(parts) > 1 else "")


def parse_instance(text: Union[str, IO[str]], *, source_name: Optional[str] = None) -> Instance:
    """
    Parse a TSPLIB file with a NODE_COORD_SECTION.

    Nodes keep file order (row i is node i). A missing NAME falls back to
    `source_name` (usually the file stem), then to "unnamed".
    """
    if isinstance(text, str):
        stream: IO[str] = io.StringIO(text)
    else:
        stream = text

    header = {}
    coords: List[Coord] = []
    in_coords = False
    in_unknown = False
    coord_start_line = None
    last_line_no = 0

    for line_no, raw in enumerate(stream, start=1):
        last_line_no = line_no
        line = raw.strip()
        if not line:
            continue
        upper = line.upper()

        if upper == "EOF":
            break

        if in_coords:
            first = line.split()[0]
            if first.upper().endswith("_SECTION") or first.rstrip(":").upper() in _HEADER_KEYS:
                in_coords = False
            else:
                parts = line.split()
                if len(parts) != 3:
                    raise TSPLIBParseError(
                        f"expected 'id x y' in NODE_COORD_SECTION, got {len(parts)} fields", line_no
                    )
                try:
                    x, y = float(parts[1]), float(parts[2])
                except ValueError:
                    raise TSPLIBParseError(f"non-numeric coordinate in {line!r}", line_no) from None
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise TSPLIBParseError(f"non-finite coordinate in {line!r}", line_no)
                coords.append((x, y))
                continue

        key, value = _split_header(line)

        if key == "NODE_COORD_SECTION":
            if "DIMENSION" not in header:
                raise TSPLIBParseError("NODE_COORD_SECTION before DIMENSION", line_no)
            in_coords = True
            in_unknown = False
            coord_start_line = line_no
            continue

        if key.endswith("_SECTION"):
            logger.warning(f"[tsplib] line {line_no}: skipping unsupported section {key}")
            in_unknown = True
            continue

        if key in _HEADER_KEYS:
            in_unknown = False
            header[key] = value
            continue

        if in_unknown:
            continue

        if ":" not in line:
            raise TSPLIBParseError(f"malformed header line {line!r}", line_no)
        logger.warning(f"[tsplib] line {line_no}: ignoring unknown header key {key}")

    if "DIMENSION" not in header:
        raise TSPLIBParseError("missing DIMENSION header")
    try:
        dimension = int(header["DIMENSION"])
    except ValueError:
        raise TSPLIBParseError(f"DIMENSION is not an integer: {header['DIMENSION']!r}") from None

    ewt = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if ewt not in PLANAR_EDGE_WEIGHT_TYPES:
        raise TSPLIBParseError(f"unsupported EDGE_WEIGHT_TYPE {ewt} (need planar coordinates)")
    if header.get("NODE_COORD_TYPE", "TWOD_COORDS").upper() != "TWOD_COORDS":
        raise TSPLIBParseError(f"unsupported NODE_COORD_TYPE {header['NODE_COORD_TYPE']}")

    if coord_start_line is None:
        raise TSPLIBParseError("missing NODE_COORD_SECTION")
    if len(coords) != dimension:
        raise TSPLIBParseError(
            f"DIMENSION is {dimension} but NODE_COORD_SECTION (from line {coord_start_line}) has {len(coords)} rows",
            last_line_no,
        )

    name = header.get("NAME") or source_name or "unnamed"
    return Instance(
        name=name,
        coords=tuple(coords),
        edge_weight_type=ewt,
        comment=header.get("COMMENT", ""),
    )


def serialize_instance(inst: Instance) -> str:
    name = inst.name
    if not name.strip():
        logger.warning("[tsplib] instance has an empty name, writing 'unnamed'")
        name = "unnamed"
    lines = [f"NAME : {name}"]
    if inst.comment:
        lines.append(f"COMMENT : {inst.comment}")
    lines += [
        "TYPE : TSP",
        f"DIMENSION : {inst.n}",
        f"EDGE_WEIGHT_TYPE : {inst.edge_weight_type}",
        "NODE_COORD_SECTION",
    ]
    # repr() gives the shortest string that round-trips a double.
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(inst.coords, start=1)]
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def load_instance(path: Union[str, pathlib.Path]) -> Instance:
    path = pathlib.Path(path)
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        return parse_instance(f, source_name=path.stem)


def save_instance(inst: Instance, path: Union[str, pathlib.Path]) -> None:
    pathlib.Path(path).write_text(serialize_instance(inst), encoding="utf-8")


def synthetic_instance(n: int, seed: int = 0, *, side: float = 1000.0) -> Instance:
    """Uniform random points in a side x side square."""
    rng = np.random.default_rng(seed)
    return Instance.from_points(f"uniform{n}_s{seed}", rng.uniform(0.0, side, size=(n, 2)))


def demo_instance() -> Instance:
    """25-point jittered 5x5 grid used for the separator/MDS demonstrations."""
    rng = np.random.default_rng(25)
    gx, gy = np.meshgrid(np.arange(5, dtype=float), np.arange(5, dtype=float))
    grid = np.column_stack([gx.ravel(), gy.ravel()]) * 10.0
    return Instance.from_points("demo25", grid + rng.uniform(-2.5, 2.5, size=grid.shape))
