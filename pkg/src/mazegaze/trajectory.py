from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _arr(v) -> np.ndarray:
    return np.asarray(getattr(v, "data", v), dtype=float)


@dataclass
class GazeTrajectory:
    """Fixation points (pixels), plus the ball predictions when a model made them.

    Items are numpy arrays or ``DValue`` s; model rollouts keep ``DValue`` s so
    the losses can be differentiated.  ``eye_positions[0]`` is the initial
    fixation.
    """

    eye_positions: list
    ball_positions: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.eye_positions) - 1

    def eye_array(self) -> np.ndarray:
        return np.stack([_arr(v) for v in self.eye_positions])

    def ball_array(self) -> np.ndarray:
        if not self.ball_positions:
            return np.zeros((0, 2))
        return np.stack([_arr(v) for v in self.ball_positions])

    def select(self, b: int) -> "GazeTrajectory":
        """Pull one maze out of a batched trajectory as plain arrays."""
        return GazeTrajectory(
            [_arr(v)[b] for v in self.eye_positions],
            [_arr(v)[b] for v in self.ball_positions],
        )
