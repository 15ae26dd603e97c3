"""State-space coverage and aggregate score metrics."""

from __future__ import annotations

import logging
import math
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

# (xlo, xhi, ylo, yhi) of the maze wall bars; matches PointMassMaze defaults
DEFAULT_WALLS = ((-0.6, 0.6, -0.025, 0.025), (-0.025, 0.025, -0.6, 0.6))


def reachable_cells(grid: int = 20, walls=DEFAULT_WALLS, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Boolean (grid, grid) mask of cells not entirely covered by a wall."""
    edges = np.linspace(low, high, grid + 1)
    eps = 1e-9 * (high - low)  # linspace edges land a few ulps off the wall coordinates
    mask = np.ones((grid, grid), dtype=bool)
    for i in range(grid):
        for j in range(grid):
            x0, x1, y0, y1 = edges[i], edges[i + 1], edges[j], edges[j + 1]
            for xl, xh, yl, yh in walls:
                if xl <= x0 + eps and x1 <= xh + eps and yl <= y0 + eps and y1 <= yh + eps:
                    mask[i, j] = False
    return mask


def cell_indices(positions: np.ndarray, grid: int = 20, low: float = -1.0, high: float = 1.0):
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    idx = np.floor((p - low) / (high - low) * grid).astype(np.int64)
    idx = np.clip(idx, 0, grid - 1)
    return idx[:, 0], idx[:, 1]


def coverage(states, grid: int = 20, walls=DEFAULT_WALLS) -> float:
    """Fraction of reachable grid cells holding at least one state's (x, y)."""
    states = np.asarray(states, dtype=np.float64)
    if states.size == 0:
        return 0.0
    reach = reachable_cells(grid, walls)
    visited = np.zeros((grid, grid), dtype=bool)
    visited[cell_indices(states[..., :2], grid)] = True
    return float(np.sum(visited & reach) / np.sum(reach))


class CoverageTracker:
    """Incremental version of :func:`coverage` for long runs."""

    def __init__(self, grid: int = 20, walls=DEFAULT_WALLS):
        self.grid = grid
        self.reach = reachable_cells(grid, walls)
        self.visited = np.zeros((grid, grid), dtype=bool)

    def add(self, state) -> None:
        i, j = cell_indices(np.asarray(state)[..., :2], self.grid)
        self.visited[i, j] = True

    @property
    def value(self) -> float:
        return float(np.sum(self.visited & self.reach) / np.sum(self.reach))


def iqm(values: Sequence[float]) -> float:
    """Mean of the middle half after dropping floor(n/4) from each end."""
    x = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    cut = int(math.floor(0.25 * len(x)))
    mid = x[cut : len(x) - cut]
    return math.fsum(mid) / len(mid)


def optimality_gap(values: Sequence[float], target: float = 1.0) -> float:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    return math.fsum(target - np.minimum(x, target)) / len(x)


def normalize_scores(scores: Mapping[str, Sequence[float]], expert: Mapping[str, float]) -> np.ndarray:
    out = []
    for task, vals in scores.items():
        if task not in expert:
            raise KeyError(f"no expert score for task {task!r}")
        out.extend(np.asarray(vals, dtype=np.float64) / expert[task])
    return np.asarray(out)


def aggregate_metrics(scores: Mapping[str, Sequence[float]], expert: Mapping[str, float]) -> dict:
    """IQM, optimality gap, mean and median of expert-normalised scores."""
    norm = normalize_scores(scores, expert)
    if len(norm) < 4:
        log.warning("only %d normalised scores; reporting the mean alone", len(norm))
        return {"n": int(len(norm)), "mean": float(np.mean(norm)) if len(norm) else float("nan"),
                "warning": "fewer than 4 scores"}
    return {
        "n": int(len(norm)),
        "iqm": iqm(norm),
        "optimality_gap": optimality_gap(norm),
        "mean": float(np.mean(norm)),
        "median": float(np.median(norm)),
    }
