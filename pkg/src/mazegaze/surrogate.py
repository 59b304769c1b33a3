"""Synthetic eye-tracking subjects, used when the released human data is not at hand.

A simulated subject fixates the entrance cross, then saccades from point to
point along the solution path, landing roughly every ``step_px_mean`` pixels
of arc length (which cuts corners), and ends on the exit.  The trace is
sampled at 1 ms with a per-trial calibration offset and tracker noise, and is
written in the same intermediate format as real data, so it exercises the
full processing pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eyedata import TrialRecord, px_to_deg
from .gazernn import point_at_arclength
from .maze import RenderedMaze


@dataclass(frozen=True)
class SubjectModel:
    step_px_mean: float = 10.0
    step_px_sd: float = 3.0
    landing_jitter_px: float = 0.8
    saccade_speed: float = 300.0  # deg/s, constant-velocity ramps
    fixation_ms: tuple = (150, 350)
    pre_onset_ms: int = 400
    final_fixation_ms: int = 400
    calibration_sd_deg: float = 0.3
    tracker_noise_deg: float = 0.01


def fixation_targets(maze: RenderedMaze, rng: np.random.Generator, subject: SubjectModel) -> np.ndarray:
    """Landing points in pixels, entrance first and exit last."""
    poly = np.asarray(maze.solution_polyline, dtype=float)
    total = maze.solution_length()
    shape = (subject.step_px_mean / subject.step_px_sd) ** 2
    scale = subject.step_px_sd**2 / subject.step_px_mean
    pts = [poly[0]]
    s = 0.0
    while True:
        s += max(rng.gamma(shape, scale), 1.0)
        if s >= total - 0.5 * subject.step_px_mean:
            break
        pts.append(point_at_arclength(poly, s) + rng.normal(0.0, subject.landing_jitter_px, 2))
    pts.append(poly[-1])
    return np.array(pts)


def simulate_trial(
    maze: RenderedMaze,
    rng: np.random.Generator,
    subject: SubjectModel = SubjectModel(),
    subject_id: str = "synthetic",
) -> TrialRecord:
    side = maze.image.shape[0]
    targets = px_to_deg(fixation_targets(maze, rng, subject), side)
    cross = targets[0]
    xs = [np.repeat(cross[None], subject.pre_onset_ms, axis=0)]
    onset = subject.pre_onset_ms
    here = cross
    for target in targets[1:]:
        dwell = int(rng.integers(subject.fixation_ms[0], subject.fixation_ms[1] + 1))
        xs.append(np.repeat(here[None], dwell, axis=0))
        amp = float(np.linalg.norm(target - here))
        n = max(int(np.ceil(amp / subject.saccade_speed * 1000.0)), 1)
        frac = np.arange(1, n + 1)[:, None] / n
        xs.append(here + frac * (target - here))
        here = target
    xs.append(np.repeat(here[None], subject.final_fixation_ms, axis=0))
    xy = np.concatenate(xs)
    offset = rng.normal(0.0, subject.calibration_sd_deg, 2)
    xy = xy + offset + rng.normal(0.0, subject.tracker_noise_deg, xy.shape)
    t = np.arange(len(xy), dtype=float)
    return TrialRecord(
        maze_id=maze.maze_id,
        samples=np.column_stack([t, xy]),
        fixation_cross=cross,
        response=here,
        correct=True,
        maze_onset_ms=float(onset),
        subject_id=subject_id,
    )


def simulate_subjects(mazes, n_subjects: int, repeats: int, seed: int, subject: SubjectModel = SubjectModel()):
    """Trials per subject id; every subject sees every maze ``repeats`` times."""
    out = {}
    for s in range(n_subjects):
        rng = np.random.default_rng([seed, s])
        sid = f"S{s + 1:02d}"
        out[sid] = [simulate_trial(m, rng, subject, sid) for m in mazes for _ in range(repeats)]
    return out
