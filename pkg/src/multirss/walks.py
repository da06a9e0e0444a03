"""Branching walks: at each step every lineage splits into one that stays and
one that moves by the step vector, so the reachable set after t steps is
the set of subset sums of the first t steps.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import rng_from_seed

DEFAULT_BUDGET = 1 << 24


class FrontierBudgetError(RuntimeError):
    """The frontier would exceed the point budget; ``frontier`` is the last one that fit."""

    def __init__(self, message: str, frontier: "WalkFrontier"):
        super().__init__(message)
        self.frontier = frontier


@dataclass(frozen=True, eq=False)
class WalkFrontier:
    t: int
    points: np.ndarray  # (k, d), rows in lexicographic order
    dedup_cell: float = 0.0

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def origin_included(self) -> bool:
        return bool(np.any(np.all(self.points == 0.0, axis=1)))

    def as_set(self) -> set:
        return {tuple(p) for p in self.points.tolist()}


def initial_frontier(d: int, dedup_cell: float = 0.0) -> WalkFrontier:
    if dedup_cell < 0:
        raise ValueError("dedup_cell must be non-negative")
    return WalkFrontier(0, np.zeros((1, d)), float(dedup_cell))


def _lex_sort(points: np.ndarray) -> np.ndarray:
    order = np.lexsort(points.T[::-1])
    return points[order]


def _unique_rows(points: np.ndarray) -> np.ndarray:
    if points.shape[1] == 1:
        return np.unique(points.ravel())[:, None]
    pts = _lex_sort(points)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    return pts[keep]


def _dedup(points: np.ndarray, cell: float) -> np.ndarray:
    """Keep the lexicographically least point of each grid cell; the origin
    always represents its own cell so the staying lineage survives."""
    pts = _lex_sort(points)
    cells = np.floor(pts / cell).astype(np.int64)
    # lexsort is stable, so within a cell the points stay in lexicographic order
    order = np.lexsort(cells.T[::-1])
    cs = cells[order]
    new_group = np.ones(len(cs), dtype=bool)
    new_group[1:] = np.any(cs[1:] != cs[:-1], axis=1)
    reps = pts[order[new_group]]
    origin_cell = np.zeros(pts.shape[1], dtype=np.int64)  # floor(0 / cell) = 0
    rep_cells = np.floor(reps / cell).astype(np.int64)
    at_origin = np.all(rep_cells == origin_cell, axis=1)
    reps[at_origin] = 0.0
    return _lex_sort(reps)


def step(f: WalkFrontier, x, budget: int = DEFAULT_BUDGET) -> WalkFrontier:
    """Branch every point into (stay, move by x), then deduplicate."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (f.d,):
        raise ValueError(f"step has dimension {x.size}, frontier has {f.d}")
    if 2 * f.size > budget and f.dedup_cell == 0:
        raise FrontierBudgetError(
            f"frontier would reach {2 * f.size} points (budget {budget}); use a positive dedup_cell", f
        )
    pts = np.concatenate([f.points, f.points + x])
    if f.dedup_cell == 0:
        pts = _unique_rows(pts)
    else:
        pts = _dedup(pts, f.dedup_cell)
    if len(pts) > budget:
        raise FrontierBudgetError(f"frontier has {len(pts)} points (budget {budget}); use a larger dedup_cell", f)
    return WalkFrontier(f.t + 1, pts, f.dedup_cell)


def min_distances(points: np.ndarray, targets: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    """Minimum sup-norm distance from the point set to each target."""
    best = np.full(len(targets), np.inf)
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        dist = np.max(np.abs(p[:, None, :] - targets[None, :, :]), axis=2).min(axis=0)
        best = np.minimum(best, dist)
    return best


@dataclass(frozen=True)
class WalkTrajectory:
    sizes: tuple  # frontier size at t = 0..steps
    distances: tuple  # per t, a tuple with one distance per target
    targets: tuple
    dedup_cell: float
    seed: int
    steps_taken: np.ndarray = field(default=None, compare=False, repr=False)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dedup_cell": self.dedup_cell,
            "targets": [list(t) for t in self.targets],
            "frontier_size": list(self.sizes),
            "distances": [list(r) for r in self.distances],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "frontier_size"] + [f"dist_target_{j + 1}" for j in range(len(self.targets))])
        for t, (size, row) in enumerate(zip(self.sizes, self.distances)):
            w.writerow([t, size] + [repr(x) for x in row])
        return buf.getvalue()


def walk_steps(d: int, steps: int, seed: int) -> np.ndarray:
    return rng_from_seed(seed).standard_normal((steps, d))


def run_walk(d: int, steps: int, seed: int, dedup_cell: float = 0.0, targets=None, budget: int = DEFAULT_BUDGET) -> WalkTrajectory:
    """Walk with standard normal steps, recording frontier sizes and distances to targets."""
    xs = walk_steps(d, steps, seed)
    tg = np.zeros((1, d)) if targets is None else np.atleast_2d(np.asarray(targets, dtype=float))
    if tg.shape[1] != d:
        raise ValueError(f"targets must have dimension {d}")
    f = initial_frontier(d, dedup_cell)
    sizes = [f.size]
    dists = [tuple(float(v) for v in min_distances(f.points, tg))]
    for x in xs:
        f = step(f, x, budget)
        sizes.append(f.size)
        dists.append(tuple(float(v) for v in min_distances(f.points, tg)))
    return WalkTrajectory(tuple(sizes), tuple(dists), tuple(tuple(map(float, t)) for t in tg), float(dedup_cell), seed, xs)
