import math
import sys

import numpy as np
import pytest

from celltrack.geometry import LabelMask
from celltrack.synth import RodCell, rasterize_rod


def grid_from_text(text: str) -> np.ndarray:
    """``"0 1 1 / 0 1 0"`` -> 2x3 integer grid."""
    return np.array([[int(v) for v in row.split()] for row in text.split("/")], dtype=np.int64)


def paint_rods(rods, shape=(96, 96)) -> np.ndarray:
    """Label grid (height, width) from ``[(label, RodCell), ...]``; later rods overwrite earlier ones."""
    grid = np.zeros(shape, dtype=np.int64)
    for label, rod in rods:
        px = rasterize_rod(rod, (shape[1], shape[0]))
        grid[px[:, 0], px[:, 1]] = label
    return grid


def rod(x, y, theta=0.0, length=30.0, width=7.0) -> RodCell:
    return RodCell(0, (float(x), float(y)), float(theta), float(length), float(width))


def brick_colony(rows=4, cols=4, cell=(6, 14), gap=1, origin=(5, 5), shape=(64, 96)):
    """Axis-aligned rectangular cells in a brick grid, labelled 1.. in row-major order."""
    grid = np.zeros(shape, dtype=np.int64)
    h, w = cell
    lab = 0
    for i in range(rows):
        for j in range(cols):
            lab += 1
            r0 = origin[0] + i * (h + gap)
            c0 = origin[1] + j * (w + gap) + (w // 2 if i % 2 else 0)
            grid[r0:r0 + h, c0:c0 + w] = lab
    return grid


def relabel(grid: np.ndarray, rng) -> tuple[np.ndarray, dict]:
    """Shuffle nonzero labels; returns the new grid and old -> new label map."""
    ids = np.unique(grid[grid > 0])
    new = rng.permutation(len(ids)) + 1
    lookup = np.zeros(grid.max() + 1, dtype=np.int64)
    lookup[ids] = new
    return lookup[grid], {int(a): int(b) for a, b in zip(ids, new)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def mask(grid, frame=0) -> LabelMask:
    return LabelMask(np.asarray(grid), frame)


def capsule_pair_fixture(theta, shift1, shift2, length=30.0, width=7.0, shape=(96, 96)):
    """Father rod in frame t and its two equal halves (each displaced) in frame t+1."""
    c = np.array([shape[1] / 2.0, shape[0] / 2.0])
    ax = np.array([math.cos(theta), math.sin(theta)])
    father = RodCell(0, tuple(c), theta, length, width)
    d1 = RodCell(1, tuple(c - ax * length / 4 + np.asarray(shift1)), theta, length / 2, width)
    d2 = RodCell(2, tuple(c + ax * length / 4 + np.asarray(shift2)), theta, length / 2, width)
    return paint_rods([(5, father)], shape), paint_rods([(3, d1), (9, d2)], shape)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
