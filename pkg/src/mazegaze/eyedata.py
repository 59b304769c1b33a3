"""Human eye-trace processing: smoothing, saccade detection, recalibration, units.

Gaze samples are ``(t_ms, x_deg, y_deg)`` rows.  Positions use the maze's
pixel frame rescaled to degrees about the maze center (x to the right, y
down), so ``px_to_deg`` / ``deg_to_px`` are plain affine maps.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .metrics import PathPoints

log = logging.getLogger(__name__)

MAZE_DEG = 14.0
MAZE_PX = 39
DEG_PER_PX = MAZE_DEG / MAZE_PX

# the "4 ms Gaussian kernel" is read as the kernel's full width at half maximum
KERNEL_WIDTH_MS = 4.0
KERNEL_SIGMA_MS = KERNEL_WIDTH_MS / (2.0 * np.sqrt(2.0 * np.log(2.0)))
VELOCITY_THRESHOLD = 50.0  # deg/s
MERGE_GAP_MS = 10.0
DEFAULT_FIXATION_WINDOW_MS = 200.0

TRIAL_FILE_MAGIC = "# mazegaze trials v1"


class TrialFormatError(ValueError):
    pass


@dataclass
class TrialRecord:
    maze_id: str
    samples: np.ndarray  # [N, 3] rows of (t_ms, x_deg, y_deg)
    fixation_cross: np.ndarray
    response: np.ndarray
    correct: bool
    maze_onset_ms: float | None = None
    subject_id: str = ""
    flags: tuple = ()

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, 3)
        self.fixation_cross = np.asarray(self.fixation_cross, dtype=float)
        self.response = np.asarray(self.response, dtype=float)
        t = self.samples[:, 0]
        if np.any(np.diff(t) <= 0):
            raise TrialFormatError(f"trial {self.maze_id!r}: timestamps are not strictly increasing")


@dataclass
class SaccadeEvent:
    onset_ms: float
    offset_ms: float
    start: np.ndarray
    end: np.ndarray
    peak_velocity: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return self.end - self.start


# ---------------------------------------------------------------------------
# units


def _center(side: int) -> float:
    return (side - 1) / 2.0


def px_to_deg(p_px, side: int = MAZE_PX):
    """Maze pixels to degrees of visual angle, about the maze center."""
    return (np.asarray(p_px, dtype=float) - _center(side)) * (MAZE_DEG / side)


def deg_to_px(p_deg, side: int = MAZE_PX):
    return np.asarray(p_deg, dtype=float) * (side / MAZE_DEG) + _center(side)


# ---------------------------------------------------------------------------
# signal processing


def gaussian_kernel(sigma: float, dt: float = 1.0) -> np.ndarray:
    half = int(np.ceil(4.0 * sigma / dt))
    x = np.arange(-half, half + 1) * dt
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(samples: np.ndarray, kernel_sigma_ms: float = KERNEL_SIGMA_MS) -> np.ndarray:
    """Gaussian-smooth x and y; the kernel is cut at 4 sigma and renormalized at the edges."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise ValueError("smooth needs at least one sample")
    if kernel_sigma_ms <= 0:
        return samples.copy()
    dt = float(np.median(np.diff(samples[:, 0]))) if len(samples) > 1 else 1.0
    k = gaussian_kernel(kernel_sigma_ms, dt)
    norm = np.convolve(np.ones(len(samples)), k, mode="same")
    out = samples.copy()
    for axis in (1, 2):
        out[:, axis] = np.convolve(samples[:, axis], k, mode="same") / norm
    return out


def speed(samples: np.ndarray) -> np.ndarray:
    """Gaze speed in deg/s; central differences inside, one-sided at the ends."""
    t = samples[:, 0] / 1000.0
    if len(samples) < 2:
        return np.zeros(len(samples))
    vx = np.gradient(samples[:, 1], t)
    vy = np.gradient(samples[:, 2], t)
    return np.hypot(vx, vy)


def detect_saccades(
    samples: np.ndarray,
    threshold_deg_per_s: float = VELOCITY_THRESHOLD,
    positions: np.ndarray | None = None,
    merge_gap_ms: float = MERGE_GAP_MS,
) -> list[SaccadeEvent]:
    """Maximal runs of above-threshold speed become saccade events.

    ``samples`` should already be smoothed.  Start and end positions are read
    at the samples just outside each run, from ``positions`` when given (for
    instance the unsmoothed trace) and from ``samples`` otherwise.  Runs
    separated by less than ``merge_gap_ms`` are merged.
    """
    samples = np.asarray(samples, dtype=float)
    pos = samples if positions is None else np.asarray(positions, dtype=float)
    v = speed(samples)
    above = v > threshold_deg_per_s
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(int), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    runs = [[starts[0], stops[0]]]
    t = samples[:, 0]
    for a, b in zip(starts[1:], stops[1:]):
        if t[a] - t[runs[-1][1]] < merge_gap_ms:
            runs[-1][1] = b
        else:
            runs.append([a, b])
    n = len(samples)
    events = []
    for a, b in runs:
        i0, i1 = max(a - 1, 0), min(b + 1, n - 1)
        events.append(
            SaccadeEvent(
                onset_ms=float(t[i0]),
                offset_ms=float(t[i1]),
                start=pos[i0, 1:3].copy(),
                end=pos[i1, 1:3].copy(),
                peak_velocity=float(v[a : b + 1].max()),
            )
        )
    return events


def extract_saccades(
    samples: np.ndarray,
    kernel_sigma_ms: float = KERNEL_SIGMA_MS,
    threshold_deg_per_s: float = VELOCITY_THRESHOLD,
    merge_gap_ms: float = MERGE_GAP_MS,
) -> list[SaccadeEvent]:
    """Smooth, detect on the smoothed trace, read endpoints from the raw trace."""
    sm = smooth(samples, kernel_sigma_ms)
    return detect_saccades(sm, threshold_deg_per_s, positions=samples, merge_gap_ms=merge_gap_ms)


# ---------------------------------------------------------------------------
# per-trial processing


def fixation_window(trial: TrialRecord) -> np.ndarray:
    t = trial.samples[:, 0]
    if len(t) == 0:
        return np.zeros(len(t), dtype=bool)
    if trial.maze_onset_ms is not None:
        return t < trial.maze_onset_ms
    return t < t[0] + DEFAULT_FIXATION_WINDOW_MS


def recalibrate(trial: TrialRecord) -> TrialRecord:
    """Subtract (median gaze during the pre-maze fixation) - (fixation cross)."""
    window = fixation_window(trial)
    if not window.any():
        warnings.warn(f"trial {trial.maze_id!r}: no fixation window, passed through uncalibrated")
        return replace(trial, flags=tuple(trial.flags) + ("no_fixation_window",))
    error = np.median(trial.samples[window, 1:3], axis=0) - trial.fixation_cross
    samples = trial.samples.copy()
    samples[:, 1:3] -= error
    flags = trial.flags if "recalibrated" in trial.flags else tuple(trial.flags) + ("recalibrated",)
    return replace(trial, samples=samples, flags=flags)


def trial_saccades(trial: TrialRecord, **kwargs) -> list[SaccadeEvent]:
    """Saccades made after maze onset."""
    events = extract_saccades(trial.samples, **kwargs)
    if trial.maze_onset_ms is None:
        return events
    return [e for e in events if e.offset_ms >= trial.maze_onset_ms]


def fixation_path(trial: TrialRecord, events: list[SaccadeEvent] | None = None) -> PathPoints:
    """Initial fixation followed by every saccade landing point (degrees)."""
    if events is None:
        events = trial_saccades(trial)
    window = fixation_window(trial)
    if window.any():
        first = np.median(trial.samples[window, 1:3], axis=0)
    elif events:
        first = events[0].start
    else:
        first = trial.samples[0, 1:3]
    pts = [first] + [e.end for e in events]
    return PathPoints(np.array(pts), source="human")


def estimate_ball_speed(lengths_px, counts) -> float:
    """Mean over trials of solution length / saccade count; zero counts are dropped."""
    ratios = []
    for l, n in zip(lengths_px, counts):
        if n == 0:
            warnings.warn("trial with zero saccades excluded from ball-speed estimate")
            continue
        ratios.append(l / n)
    if not ratios:
        raise ValueError("no trial with saccades")
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# intermediate trial file


def _num(v) -> str:
    return repr(float(v))


def save_trials(trials: list[TrialRecord], path, header: dict | None = None) -> None:
    header = dict(header or {})
    if trials and "subject_id" not in header:
        header["subject_id"] = trials[0].subject_id
    lines = [TRIAL_FILE_MAGIC]
    lines += [f"{k}: {v}" for k, v in header.items()]
    for tr in trials:
        lines.append(f"trial {tr.maze_id}")
        lines.append(f"fixation_cross {_num(tr.fixation_cross[0])} {_num(tr.fixation_cross[1])}")
        if tr.maze_onset_ms is not None:
            lines.append(f"maze_onset_ms {_num(tr.maze_onset_ms)}")
        lines.append(f"response {_num(tr.response[0])} {_num(tr.response[1])}")
        lines.append(f"correct {int(bool(tr.correct))}")
        lines.append(f"samples {len(tr.samples)}")
        lines += [f"{_num(t)} {_num(x)} {_num(y)}" for t, x, y in tr.samples]
        lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(parts, n, lineno, what):
    if len(parts) != n:
        raise TrialFormatError(f"line {lineno}: {what} needs {n} values")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise TrialFormatError(f"line {lineno}: bad number in {what}") from exc


def load_trials(path) -> list[TrialRecord]:
    """Parse an intermediate trial file; schema problems raise with the line number."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        warnings.warn(f"{path}: empty trial file")
        return []
    if lines[0].strip() != TRIAL_FILE_MAGIC:
        raise TrialFormatError(f"{path}:1: missing header {TRIAL_FILE_MAGIC!r}")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("trial "):
        if lines[i].strip():
            key, sep, val = lines[i].partition(":")
            if not sep:
                raise TrialFormatError(f"{path}:{i + 1}: expected 'key: value' header line")
            header[key.strip()] = val.strip()
        i += 1
    subject = header.get("subject_id", "")
    trials = []
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "trial" or len(head) != 2:
            raise TrialFormatError(f"{path}:{i + 1}: expected 'trial <maze_id>'")
        maze_id = head[1]
        fields: dict = {"maze_onset_ms": None}
        i += 1
        while i < len(lines) and not lines[i].startswith("samples"):
            parts = lines[i].split()
            if not parts:
                i += 1
                continue
            key, vals = parts[0], parts[1:]
            if key in ("fixation_cross", "response"):
                fields[key] = _floats(vals, 2, i + 1, key)
            elif key == "maze_onset_ms":
                fields[key] = _floats(vals, 1, i + 1, key)[0]
            elif key == "correct":
                fields[key] = bool(_floats(vals, 1, i + 1, key)[0])
            else:
                raise TrialFormatError(f"{path}:{i + 1}: unknown field {key!r} in trial {maze_id}")
            i += 1
        for key in ("fixation_cross", "response", "correct"):
            if key not in fields:
                raise TrialFormatError(f"{path}: trial {maze_id} is missing field {key!r}")
        if i >= len(lines):
            raise TrialFormatError(f"{path}: trial {maze_id} has no samples block")
        n = int(_floats(lines[i].split()[1:], 1, i + 1, "samples")[0])
        rows = lines[i + 1 : i + 1 + n]
        if len(rows) != n:
            raise TrialFormatError(f"{path}: trial {maze_id} is truncated")
        data = np.array([_floats(r.split(), 3, i + 2 + k, "sample row") for k, r in enumerate(rows)]).reshape(-1, 3)
        i += 1 + n
        if i >= len(lines) or lines[i].strip() != "end":
            raise TrialFormatError(f"{path}:{i + 1}: expected 'end' after samples of trial {maze_id}")
        i += 1
        if np.any(np.diff(data[:, 0]) <= 0):
            raise TrialFormatError(f"{path}: trial {maze_id}: timestamps are not strictly increasing")
        trials.append(TrialRecord(maze_id=maze_id, samples=data, subject_id=subject, **fields))
    log.info("%s: %d trials over %d mazes", path, len(trials), len({t.maze_id for t in trials}))
    return trials


def load_trial_dir(path) -> list[TrialRecord]:
    """Load one trial file, or every ``*.trials`` file in a directory."""
    path = Path(path)
    if path.is_dir():
        out = []
        for f in sorted(path.glob("*.trials")):
            out.extend(load_trials(f))
        return out
    return load_trials(path)


@dataclass
class ProcessedTrial:
    trial: TrialRecord
    saccades: list = field(default_factory=list)
    path: PathPoints | None = None


def process_trial(trial: TrialRecord) -> ProcessedTrial:
    """Recalibrate, detect saccades and build the fixation path of one trial."""
    cal = recalibrate(trial)
    events = trial_saccades(cal)
    return ProcessedTrial(cal, events, fixation_path(cal, events))


# ---------------------------------------------------------------------------
# saccade distribution file (consumed by the baseline)


def save_distribution(vectors: np.ndarray, counts, path, header: dict | None = None) -> None:
    """Write saccade vectors (as amplitude/angle) and per-trial saccade counts."""
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 2)
    lines = ["# mazegaze saccade distribution v1"]
    if header:
        lines += [f"# {k}={v}" for k, v in header.items()]
    lines.append("kind,value_a,value_b")
    for dx, dy in vectors:
        lines.append(f"saccade,{_num(np.hypot(dx, dy))},{_num(np.arctan2(dy, dx))}")
    for n in counts:
        lines.append(f"count,{int(n)},")
    Path(path).write_text("\n".join(lines) + "\n")


def load_distribution_file(path):
    """Returns ``(amplitudes_deg, angles_rad, counts)``."""
    amps, angles, counts = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line or line.startswith("#") or line.startswith("kind,"):
            continue
        parts = line.split(",")
        try:
            if parts[0] == "saccade":
                amps.append(float(parts[1]))
                angles.append(float(parts[2]))
            elif parts[0] == "count":
                counts.append(int(parts[1]))
            else:
                raise ValueError(parts[0])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: bad distribution row {line!r}") from exc
    return np.array(amps), np.array(angles), np.array(counts, dtype=int)
