"""Statistics-matched null model: random saccade paths, keep the one ending nearest the exit.

Candidate paths see nothing of the maze but the entrance; the exit is used
only to pick the winner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eyedata import DEG_PER_PX
from .trajectory import GazeTrajectory


@dataclass
class SaccadeDistribution:
    amplitudes: np.ndarray  # degrees
    angles: np.ndarray  # radians, same frame as pixel coordinates (y down)
    path_lengths: np.ndarray  # saccades per trial

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        self.path_lengths = np.asarray(self.path_lengths, dtype=int)
        if not (self.amplitudes.size and self.angles.size and self.path_lengths.size):
            raise ValueError("saccade distribution needs non-empty amplitude, angle and count samples")
        if np.any(self.amplitudes <= 0):
            raise ValueError("amplitudes must be positive")
        if np.any(self.path_lengths < 1):
            raise ValueError("path lengths must be >= 1")


def fit_distribution(saccades, counts) -> SaccadeDistribution:
    """Keep the raw empirical samples; zero-length vectors carry no angle and are dropped."""
    vec = np.asarray(saccades, dtype=float).reshape(-1, 2)
    counts = np.asarray(counts, dtype=int)
    if vec.size == 0 or counts.size == 0:
        raise ValueError("fit_distribution needs at least one saccade and one count")
    amp = np.hypot(vec[:, 0], vec[:, 1])
    keep = amp > 0
    counts = counts[counts >= 1]
    return SaccadeDistribution(amp[keep], np.arctan2(vec[keep, 1], vec[keep, 0]), counts)


def from_polar(amplitudes, angles, counts) -> SaccadeDistribution:
    return SaccadeDistribution(amplitudes, angles, counts)


def _index(u: np.ndarray, size: int) -> np.ndarray:
    return np.minimum((u * size).astype(int), size - 1)


def _sample_candidates(dist: SaccadeDistribution, entrance_px, rng: np.random.Generator, n: int, joint: bool = False):
    """Draw ``n`` candidate paths at once.

    Each candidate consumes one row of uniforms, so the first k candidates
    of a larger draw equal a draw of k with the same generator state.
    Returns ``(points [n, max_len + 1, 2] in px, lengths [n])``.
    """
    if joint and dist.amplitudes.size != dist.angles.size:
        raise ValueError("joint sampling needs paired amplitude and angle samples")
    max_len = int(dist.path_lengths.max())
    u = rng.random((n, 1 + 2 * max_len))
    lengths = dist.path_lengths[_index(u[:, 0], dist.path_lengths.size)]
    ia = _index(u[:, 1 : 1 + max_len], dist.amplitudes.size)
    ib = ia if joint else _index(u[:, 1 + max_len :], dist.angles.size)
    amp_px = dist.amplitudes[ia] / DEG_PER_PX
    theta = dist.angles[ib]
    active = np.arange(max_len)[None, :] < lengths[:, None]
    steps = np.stack([amp_px * np.cos(theta), amp_px * np.sin(theta)], axis=-1) * active[..., None]
    start = np.asarray(entrance_px, dtype=float)
    pts = np.concatenate([np.broadcast_to(start, (n, 1, 2)), start + np.cumsum(steps, axis=1)], axis=1)
    return pts, lengths


def _to_trajectory(points: np.ndarray, length: int) -> GazeTrajectory:
    return GazeTrajectory([p.copy() for p in points[: length + 1]], [])


def sample_path(dist: SaccadeDistribution, entrance_px, rng: np.random.Generator, joint: bool = False) -> GazeTrajectory:
    """One path: n ~ counts, then n saccades with independently drawn amplitude and angle."""
    pts, lengths = _sample_candidates(dist, entrance_px, rng, 1, joint)
    return _to_trajectory(pts[0], int(lengths[0]))


def final_points(dist: SaccadeDistribution, entrance_px, rng, n_candidates: int, joint: bool = False):
    pts, lengths = _sample_candidates(dist, entrance_px, rng, n_candidates, joint)
    return pts[np.arange(n_candidates), lengths], pts, lengths


def solve(maze, dist: SaccadeDistribution, n_candidates: int = 2000, rng=None, joint: bool = False) -> GazeTrajectory:
    """Best of ``n_candidates`` random paths by final distance to the exit."""
    rng = rng if rng is not None else np.random.default_rng()
    ends, pts, lengths = final_points(dist, maze.entrance_px, rng, n_candidates, joint)
    best = int(np.argmin(np.linalg.norm(ends - np.asarray(maze.exit_px, dtype=float), axis=1)))
    return _to_trajectory(pts[best], int(lengths[best]))
