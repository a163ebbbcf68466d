from __future__ import annotations

import json
import os
import sys
import pathlib
from typing import Dict

import numpy as np
import pytest

# Ensure project root is importable when running pytest from any working directory.
ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from tsplib_io import Instance  # noqa: E402

TSPLIB_DIR = pathlib.Path(os.getenv("ACHCI_INSTANCE_DIR") or ROOT / "tsplib")
REGRESSION_FILE = ROOT / "tests" / "regression_values.json"


def tsplib_file(name: str) -> pathlib.Path:
    """Path to a real TSPLIB file, skipping the test when it is not on disk."""
    path = TSPLIB_DIR / f"{name}.tsp"
    if not path.is_file():
        pytest.skip(f"{path} not available")
    return path


@pytest.fixture
def unit_square() -> Instance:
    return Instance.from_points("square", [(0, 0), (1, 0), (1, 1), (0, 1)])


@pytest.fixture
def square_with_center() -> Instance:
    return Instance.from_points("square5", [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])


@pytest.fixture
def star_instance() -> Instance:
    """12 points on two rings around the origin."""
    angles = np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    outer = np.column_stack([10.0 * np.cos(angles), 10.0 * np.sin(angles)])
    inner = np.column_stack([4.0 * np.cos(angles + 0.3), 4.0 * np.sin(angles + 0.3)])
    return Instance.from_points("star12", np.vstack([outer, inner]))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def plus_instance() -> Instance:
    """Centre plus four points at distance 10 on the axes."""
    return Instance.from_points("plus5", [(0, 0), (10, 0), (-10, 0), (0, 10), (0, -10)])


@pytest.fixture
def regression_value():
    """
    Compare a computed value with the one frozen in regression_values.json.
    A key that is not frozen yet is written to the file and the test is
    skipped, so the value is checked from the next run on.
    """

    def check(values: Dict[str, float], *, rel: float = 1e-9) -> None:
        frozen = json.loads(REGRESSION_FILE.read_text(encoding="utf-8")) if REGRESSION_FILE.is_file() else {}
        missing = {key: float(v) for key, v in values.items() if key not in frozen}
        if missing:
            frozen.update(missing)
            REGRESSION_FILE.write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            pytest.skip(f"froze {sorted(missing)}; rerun to check them")
        for key, value in values.items():
            assert value == pytest.approx(frozen[key], rel=rel), key

    return check
