"""Recurrent convolutional gaze model and its three training objectives.

Each step the maze is seen through the fovea at the current eye position.
The foveated image, stacked with the memory channels, goes through a
three-layer "memory" CNN that produces the new memory.  A strided three-layer
"saccade" CNN reads the memory, and two MLP heads emit the next eye position
and a predicted ball position, both in pixel coordinates.  The eye output
becomes the next fovea center.
"""

from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, DValue
from .fovea import FoveaParams, apply_fovea
from .maze import RenderedMaze, gen_maze, render
from .trajectory import GazeTrajectory

log = logging.getLogger(__name__)

# named random sub-streams
STREAM_MAZE, STREAM_NOISE, STREAM_INIT = 0, 1, 2


class Objective(str, enum.Enum):
    EXIT = "exit"
    SIM = "sim"
    HYBRID = "hybrid"


class RolloutError(FloatingPointError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, message, iteration, last_good_params, last_good_state):
        super().__init__(message)
        self.iteration = iteration
        self.last_good_params = last_good_params
        self.last_good_state = last_good_state


@dataclass(frozen=True)
class ModelConfig:
    memory_channels: int = 8
    memory_hidden: tuple = (16, 16)
    memory_kernel: int = 3
    saccade_channels: tuple = (16, 32, 32)
    saccade_kernel: int = 3
    mlp_hidden: int = 128
    n_steps: int = 8
    objective: Objective = Objective.SIM
    beta: float = 1.0 / 3.0
    ball_speed: float = 10.0
    fovea: FoveaParams = field(default_factory=FoveaParams)
    # if set, heads emit coordinates in half-image units about the image center
    normalized_outputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.ball_speed > 0:
            raise ValueError("ball_speed must be positive")
        if self.memory_kernel % 2 == 0 or self.saccade_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")

    def to_dict(self) -> dict:
        return {
            "memory_channels": self.memory_channels,
            "memory_hidden": list(self.memory_hidden),
            "memory_kernel": self.memory_kernel,
            "saccade_channels": list(self.saccade_channels),
            "saccade_kernel": self.saccade_kernel,
            "mlp_hidden": self.mlp_hidden,
            "n_steps": self.n_steps,
            "objective": self.objective.value,
            "beta": self.beta,
            "ball_speed": self.ball_speed,
            "normalized_outputs": self.normalized_outputs,
            "fovea": {
                "tau": self.fovea.tau,
                "noise_sigma": self.fovea.noise_sigma,
                "image_side": self.fovea.image_side,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        fov = FoveaParams(**d.pop("fovea", {}))
        for key in ("memory_hidden", "saccade_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(fovea=fov, **d)


def _saccade_out_side(side: int, kernel: int, layers: int) -> int:
    pad = kernel // 2
    for _ in range(layers):
        side = (side + 2 * pad - kernel) // 2 + 1
    return side


class GazeRNN:
    def __init__(self, config: ModelConfig, params: dict[str, DValue]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "GazeRNN":
        """He-uniform weights (bound sqrt(6/fan_in)) and zero biases."""
        shapes = cls.param_shapes(config)
        params = {}
        for name, shape in shapes.items():
            if name.endswith(".b"):
                value = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / int(np.prod(shape[1:])))
                value = rng.uniform(-bound, bound, size=shape)
            params[name] = DValue(value, requires_grad=True, name=name)
        return cls(config, params)

    @staticmethod
    def param_shapes(config: ModelConfig) -> dict[str, tuple]:
        shapes = {}
        k = config.memory_kernel
        widths = [1 + config.memory_channels, *config.memory_hidden, config.memory_channels]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"mem{i}.w"] = (b, a, k, k)
            shapes[f"mem{i}.b"] = (b,)
        k = config.saccade_kernel
        widths = [config.memory_channels, *config.saccade_channels]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"sac{i}.w"] = (b, a, k, k)
            shapes[f"sac{i}.b"] = (b,)
        side = _saccade_out_side(config.fovea.image_side, k, len(config.saccade_channels))
        flat = config.saccade_channels[-1] * side * side
        h = config.mlp_hidden
        for head in ("eye", "ball"):
            for i, (a, b) in enumerate(((flat, h), (h, h), (h, 2))):
                shapes[f"{head}{i}.w"] = (b, a)
                shapes[f"{head}{i}.b"] = (b,)
        return shapes

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


@dataclass
class ModelState:
    memory: DValue
    eye_pos: DValue


def initial_state(model: GazeRNN, entrance) -> ModelState:
    entrance = np.asarray(entrance, dtype=float)
    side = model.config.fovea.image_side
    lead = entrance.shape[:-1]
    memory = DValue(np.zeros((*lead, model.config.memory_channels, side, side)))
    return ModelState(memory=memory, eye_pos=DValue(entrance))


def _mlp(x: DValue, p, head: str) -> DValue:
    x = dc.relu(dc.linear(x, p[f"{head}0.w"], p[f"{head}0.b"]))
    x = dc.relu(dc.linear(x, p[f"{head}1.w"], p[f"{head}1.b"]))
    return dc.linear(x, p[f"{head}2.w"], p[f"{head}2.b"])


def _to_pixels(raw: DValue, cfg: ModelConfig) -> DValue:
    if not cfg.normalized_outputs:
        return raw
    c = (cfg.fovea.image_side - 1) / 2.0
    return dc.add(dc.scale(raw, c), DValue(np.full(raw.shape, c)))


def step(model: GazeRNN, state: ModelState, maze_image: DValue, rng: np.random.Generator):
    """One glimpse-and-saccade step; returns ``(new_state, eye_out, ball_out)``.

    Works on a single maze (image [H, W], eye [2]) or a batch
    (image [B, H, W], eye [B, 2]).
    """
    cfg, p = model.config, model.params
    if maze_image.shape[-2:] != (cfg.fovea.image_side,) * 2:
        raise dc.DimensionError(f"maze image {maze_image.shape} does not match image_side {cfg.fovea.image_side}")
    seen = apply_fovea(maze_image, state.eye_pos, cfg.fovea, rng)
    ch_axis = seen.ndim - 2
    seen = dc.reshape(seen, (*seen.shape[:-2], 1, *seen.shape[-2:]))
    x = dc.concat([seen, state.memory], axis=ch_axis)

    n_mem = len(cfg.memory_hidden) + 1
    pad = cfg.memory_kernel // 2
    for i in range(n_mem):
        x = dc.conv2d(x, p[f"mem{i}.w"], p[f"mem{i}.b"], stride=1, padding=pad)
        if i < n_mem - 1:
            x = dc.relu(x)
    memory = x

    pad = cfg.saccade_kernel // 2
    for i in range(len(cfg.saccade_channels)):
        x = dc.relu(dc.conv2d(x, p[f"sac{i}.w"], p[f"sac{i}.b"], stride=2, padding=pad))
    flat = dc.reshape(x, (*x.shape[:ch_axis], -1))
    eye = _to_pixels(_mlp(flat, p, "eye"), cfg)
    ball = _to_pixels(_mlp(flat, p, "ball"), cfg)
    return ModelState(memory=memory, eye_pos=eye), eye, ball


def unroll(model: GazeRNN, images, entrances, rng: np.random.Generator) -> GazeTrajectory:
    """Run ``n_steps`` steps from the entrance with zero memory."""
    image = images if isinstance(images, DValue) else DValue(images)
    state = initial_state(model, entrances)
    traj = GazeTrajectory([state.eye_pos], [])
    for i in range(model.config.n_steps):
        state, eye, ball = step(model, state, image, rng)
        if not (np.all(np.isfinite(eye.data)) and np.all(np.isfinite(ball.data))):
            raise RolloutError(f"non-finite model output at step {i}")
        traj.eye_positions.append(eye)
        traj.ball_positions.append(ball)
    return traj


def rollout(model: GazeRNN, maze: RenderedMaze, rng: np.random.Generator, track_grad: bool = False) -> GazeTrajectory:
    if track_grad:
        return unroll(model, maze.image, maze.entrance_px, rng)
    with dc.no_grad():
        return unroll(model, maze.image, maze.entrance_px, rng)


# ---------------------------------------------------------------------------
# objectives


@dataclass
class BallTruth:
    positions: np.ndarray  # [n_steps, 2]


def point_at_arclength(polyline: np.ndarray, s: float) -> np.ndarray:
    seg = np.diff(polyline, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(lengths) - 1)
    if lengths[i] == 0:
        return polyline[i].astype(float).copy()
    return polyline[i] + seg[i] * ((s - cum[i]) / lengths[i])


def ball_truth(maze: RenderedMaze, ball_speed: float = 10.0, n_steps: int = 8) -> BallTruth:
    """Constant-speed ball along the solution path, parked at the exit once it arrives."""
    poly = np.asarray(maze.solution_polyline, dtype=float)
    total = float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))
    if not total > 0:
        raise ValueError("solution polyline has zero length")
    pts = [point_at_arclength(poly, min(ball_speed * (i + 1), total)) for i in range(n_steps)]
    return BallTruth(np.array(pts))


def _squared_error(preds: list, target: np.ndarray) -> DValue:
    # mean over steps (and batch) of the squared Euclidean error
    pred = dc.stack([dc.constant(v) for v in preds])
    target = DValue(np.broadcast_to(np.asarray(target, dtype=float), pred.shape))
    return dc.scale(dc.mse(pred, target), pred.shape[-1])


def loss_exit(traj: GazeTrajectory, exit_px) -> DValue:
    exit_px = np.asarray(exit_px, dtype=float)
    return _squared_error(traj.eye_positions[1:], exit_px)


def loss_sim(traj: GazeTrajectory, truth) -> DValue:
    positions = truth.positions if isinstance(truth, BallTruth) else np.asarray(truth, dtype=float)
    return _squared_error(traj.ball_positions, positions)


def loss_hybrid(traj: GazeTrajectory, exit_px, truth, beta: float = 1.0 / 3.0) -> DValue:
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if beta == 1.0:
        return loss_exit(traj, exit_px)
    if beta == 0.0:
        return loss_sim(traj, truth)
    return dc.add(dc.scale(loss_exit(traj, exit_px), beta), dc.scale(loss_sim(traj, truth), 1.0 - beta))


def objective_loss(config: ModelConfig, traj: GazeTrajectory, exit_px, truth) -> DValue:
    if config.objective is Objective.EXIT:
        return loss_exit(traj, exit_px)
    if config.objective is Objective.SIM:
        return loss_sim(traj, truth)
    return loss_hybrid(traj, exit_px, truth, config.beta)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainParams:
    batch_size: int = 16
    lr: float = 3e-4
    iterations: int = 50_000
    seed: int = 0
    log_every: int = 100
    turn_prob: float = 0.2
    min_straight: int = 3


@dataclass
class TrainResult:
    model: GazeRNN
    adam: AdamState
    losses: list = field(default_factory=list)
    iteration: int = 0


def default_maze_source(config: ModelConfig, tp: TrainParams) -> Callable[[np.random.Generator], RenderedMaze]:
    grid = (config.fovea.image_side + 1) // 2

    def source(rng):
        return render(gen_maze(rng, grid, tp.turn_prob, tp.min_straight))

    return source


def make_batch(config: ModelConfig, mazes: list[RenderedMaze]):
    images = np.stack([m.image for m in mazes])
    entrances = np.stack([m.entrance_px for m in mazes])
    exits = np.stack([m.exit_px for m in mazes])
    truth = np.stack([ball_truth(m, config.ball_speed, config.n_steps).positions for m in mazes], axis=1)
    return images, entrances, exits, truth


def batch_loss(model: GazeRNN, mazes: list[RenderedMaze], noise_rng: np.random.Generator) -> DValue:
    """Objective averaged over a batch of mazes, recorded on the active tape."""
    images, entrances, exits, truth = make_batch(model.config, mazes)
    traj = unroll(model, images, entrances, noise_rng)
    return objective_loss(model.config, traj, exits, truth)


def iteration_rngs(seed: int, iteration: int):
    return (
        np.random.default_rng([seed, STREAM_MAZE, iteration]),
        np.random.default_rng([seed, STREAM_NOISE, iteration]),
    )


def train(
    config: ModelConfig,
    tp: TrainParams,
    maze_source: Callable | None = None,
    model: GazeRNN | None = None,
    adam: AdamState | None = None,
    start_iteration: int = 0,
    on_log: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Online training: a fresh batch of mazes every iteration, one Adam step each.

    Randomness for iteration ``i`` is derived from ``(seed, i)``, so resuming
    from a checkpoint at iteration ``i`` continues the same run exactly.
    """
    maze_source = maze_source or default_maze_source(config, tp)
    if model is None:
        model = GazeRNN.init(config, np.random.default_rng([tp.seed, STREAM_INIT]))
    if adam is None:
        adam = AdamState(lr=tp.lr)
    losses = []
    recent = []
    for it in range(start_iteration, tp.iterations):
        maze_rng, noise_rng = iteration_rngs(tp.seed, it)
        mazes = [maze_source(maze_rng) for _ in range(tp.batch_size)]
        last_good = (model.copy_params(), copy.deepcopy(adam))
        with dc.Tape():
            try:
                loss = batch_loss(model, mazes, noise_rng)
            except RolloutError as exc:
                raise TrainingAborted(f"iteration {it}: {exc}", it, *last_good) from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingAborted(f"iteration {it}: loss is {value}", it, *last_good)
            dc.backward(loss)
        bad = [k for k, v in model.params.items() if v.grad is not None and not np.all(np.isfinite(v.grad))]
        if bad:
            raise TrainingAborted(f"iteration {it}: non-finite gradient for {bad[0]}", it, *last_good)
        dc.adam_step(model.params, None, adam)
        losses.append(value)
        recent.append(value)
        if tp.log_every and (it + 1) % tp.log_every == 0:
            mean_loss = float(np.mean(recent))
            recent = []
            log.info("iteration %d loss %.4f", it + 1, mean_loss)
            if on_log is not None:
                on_log(it + 1, mean_loss)
    return TrainResult(model, adam, losses, tp.iterations)


def with_objective(config: ModelConfig, objective, **changes) -> ModelConfig:
    return replace(config, objective=Objective(objective), **changes)
