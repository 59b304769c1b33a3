"""Similarity between two gaze paths, and model-vs-human score aggregation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .trajectory import GazeTrajectory

COLLINEAR_TOL = 1e-12
# recorded in every score table that reports the area metric
AREA_CLOSURE = "last-to-last and first-to-first joins; nonzero winding; crossing lobes add"
Z_95 = 1.959963984540054


@dataclass
class PathPoints:
    points: np.ndarray
    source: str = "human"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)


def as_points(path) -> np.ndarray:
    if isinstance(path, PathPoints):
        return path.points
    if isinstance(path, GazeTrajectory):
        return path.eye_array()
    return np.asarray(path, dtype=float).reshape(-1, 2)


def nn_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance between two point sets."""
    a, b = as_points(a), as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("nn_distance needs non-empty paths")
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    d = np.sqrt(dx * dx + dy * dy)
    # correctly rounded means, so the value does not depend on summation order
    return 0.5 * (math.fsum(d.min(axis=1)) / len(a) + math.fsum(d.min(axis=0)) / len(b))


def _circuit_edges(a: np.ndarray, b: np.ndarray) -> list[tuple]:
    """Edges of the closed circuit as ``(lo, hi, sign)`` with ``lo < hi``.

    Geometry is always computed from the canonical endpoint order, so the
    result does not depend on which path comes first.
    """
    ring = np.concatenate([a, b[::-1]])
    edges = []
    for p, q in zip(ring, np.roll(ring, -1, axis=0)):
        p, q = tuple(map(float, p)), tuple(map(float, q))
        if p == q:
            continue
        edges.append((p, q, 1) if p < q else (q, p, -1))
    edges.sort(key=lambda e: (e[0], e[1]))
    return edges


def _crossing_x(e, f) -> float | None:
    (x1, y1), (x2, y2) = e[0], e[1]
    (x3, y3), (x4, y4) = f[0], f[1]
    dx1, dy1 = x2 - x1, y2 - y1
    dx2, dy2 = x4 - x3, y4 - y3
    denom = dx1 * dy2 - dy1 * dx2
    scale = max(abs(dx1), abs(dy1)) * max(abs(dx2), abs(dy2))
    if abs(denom) <= COLLINEAR_TOL * max(scale, 1e-300):
        return None
    t = ((x3 - x1) * dy2 - (y3 - y1) * dx2) / denom
    u = ((x3 - x1) * dy1 - (y3 - y1) * dx1) / denom
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return x1 + t * dx1
    return None


def _enclosed_area(edges: list[tuple]) -> float:
    """Area of the points with non-zero winding number, by vertical slabs.

    Slab boundaries are all vertex and crossing abscissae, so inside a slab
    the edges are ordered by height and the winding number is constant
    between neighbours.
    """
    xs = {p[0] for e in edges for p in e[:2]}
    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            x = _crossing_x(edges[i], edges[j])
            if x is not None:
                xs.add(x)
    xs = sorted(xs)
    # lo.x <= hi.x by construction; vertical edges never span a slab
    slanted = [(lo[0], lo[1], hi[0], hi[1], sign) for lo, hi, sign in edges if lo[0] != hi[0]]

    total = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        if x1 - x0 <= 0:
            continue
        xm = 0.5 * (x0 + x1)
        cuts = []
        for ax, ay, bx, by, sign in slanted:
            if ax < xm < bx:
                # interpolate by the fraction of the span, which cannot overflow
                dy, w = by - ay, bx - ax
                cuts.append(tuple(ay + dy * ((x - ax) / w) for x in (xm, x0, x1)) + (sign,))
        cuts.sort(key=lambda c: c[0])
        winding = 0
        for lower, upper in zip(cuts[:-1], cuts[1:]):
            winding += lower[3]
            if winding != 0:
                total += (x1 - x0) * ((upper[1] - lower[1]) + (upper[2] - lower[2])) / 2.0
    return total


def area_between(a, b) -> float:
    """Plane area enclosed between two polylines.

    The paths are closed into one circuit (A forward, A's last point to B's
    last point, B backward, B's first point to A's first point).  Where the
    circuit crosses itself the lobes are counted with their absolute area,
    and a region wound more than once counts once.
    """
    a, b = as_points(a), as_points(b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("area_between needs at least two points per path")
    edges = _circuit_edges(a, b)
    if len(edges) < 3:
        return 0.0
    return _enclosed_area(edges)


def saccade_vectors(path) -> np.ndarray:
    """Displacements between consecutive fixation points."""
    pts = as_points(path)
    if len(pts) < 2:
        raise ValueError("need at least two points to form a saccade")
    return np.diff(pts, axis=0)


METRICS: dict[str, Callable] = {"nn": nn_distance, "area": area_between}


@dataclass
class Score:
    mean: float
    ci_low: float
    ci_high: float
    n_pairs: int


def summarize(scores: Sequence[float]) -> Score:
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        return Score(float("nan"), float("nan"), float("nan"), 0)
    m = float(s.mean())
    half = Z_95 * float(s.std(ddof=1)) / np.sqrt(s.size) if s.size > 1 else 0.0
    return Score(m, m - half, m + half, int(s.size))


def all_pairs_scores(model_paths: Mapping[str, list], human_paths: Mapping[str, list], metric: Callable) -> list[float]:
    scores = []
    for maze_id, runs in model_paths.items():
        humans = human_paths.get(maze_id) or []
        if not humans:
            warnings.warn(f"maze {maze_id}: no human trials, skipped")
            continue
        for m in runs:
            for h in humans:
                scores.append(metric(m, h))
    return scores


def all_pairs_score(model_paths: Mapping[str, list], human_paths: Mapping[str, list], metric: Callable) -> Score:
    """Score every (model run, human trial) pair on each maze; mean and 95% CI."""
    return summarize(all_pairs_scores(model_paths, human_paths, metric))


def between_human_score(human_paths: Mapping[str, list], metric: Callable) -> Score:
    """Same aggregation over all pairs of distinct human trials on a maze."""
    scores = []
    for trials in human_paths.values():
        for i in range(len(trials)):
            for j in range(i + 1, len(trials)):
                scores.append(metric(trials[i], trials[j]))
    return summarize(scores)
