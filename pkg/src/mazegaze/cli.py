"""``mazegaze`` command line: test sets, training, evaluation, comparison, baseline, tau sweep.

Every command takes an optional JSON config file (``--config``); flags override
config values.  Each output file records the hash of the effective settings
and the seed that produced it.  Failures print one JSON error record on
stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import diffcore as dc
from . import eyedata as ed
from . import gazernn as gz
from . import metrics as mt
from .fovea import TAU_SWEEP, FoveaParams
from .maze import gen_maze, load_test_set, render, save_test_set
from .surrogate import simulate_subjects

log = logging.getLogger("mazegaze")

STREAM_SAMPLING = 3

CONFIG_SECTIONS = {
    "seed": None,
    "model": {f.name for f in fields(gz.ModelConfig)},
    "train": {f.name for f in fields(gz.TrainParams)} - {"seed"} | {"grid_size"},
    "testset": {"n", "grid"},
    "eval": {"runs"},
    "baseline": {"candidates", "joint"},
    "saccade_dist": {"sample"},
    "sweep": {"taus", "objectives"},
    "humans": {"subjects", "repeats"},
}
FOVEA_KEYS = {f.name for f in fields(FoveaParams)}


class CliError(RuntimeError):
    """A user-facing failure: bad input, mismatch, missing file."""


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Parse a JSON config file and reject keys the harness does not know."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: top level must be an object")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for key, value in cfg.items():
        if key not in CONFIG_SECTIONS:
            raise CliError(f"unknown config key {key!r}")
        allowed = CONFIG_SECTIONS[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise CliError(f"config section {key!r} must be an object")
        for sub, v in value.items():
            if sub not in allowed:
                raise CliError(f"unknown config key {key}.{sub}")
            if key == "model" and sub == "fovea":
                unknown = set(v) - FOVEA_KEYS
                if unknown:
                    raise CliError(f"unknown config key model.fovea.{sorted(unknown)[0]}")


def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    command: str
    seed: int
    settings: dict

    @property
    def hash(self) -> str:
        return config_hash({"command": self.command, "seed": self.seed, **self.settings})

    def header(self) -> dict:
        return {"command": self.command, "config_hash": self.hash, "seed": self.seed}

    def manifest(self, **extra) -> dict:
        return {**self.header(), "config": self.settings, **extra}


def pick(flag, cfg: dict, section: str, key: str, default):
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def resolve_seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def require_exists(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise CliError(f"input not found: {p}")


def model_config(cfg: dict, grid: int, objective=None, tau=None) -> gz.ModelConfig:
    d = dict(cfg.get("model", {}))
    fov = dict(d.pop("fovea", {}))
    side = 2 * grid - 1
    if fov.get("image_side", side) != side:
        raise CliError(f"model.fovea.image_side={fov['image_side']} does not match grid {grid} (side {side})")
    fov["image_side"] = side
    if tau is not None:
        fov["tau"] = tau
    if objective is not None:
        d["objective"] = objective
    d["fovea"] = fov
    try:
        return gz.ModelConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad model config: {exc}") from exc


def train_params(cfg: dict, args, seed: int) -> gz.TrainParams:
    t = {k: v for k, v in cfg.get("train", {}).items() if k != "grid_size"}
    if getattr(args, "iters", None) is not None:
        t["iterations"] = args.iters
    if getattr(args, "lr", None) is not None:
        t["lr"] = args.lr
    if getattr(args, "batch_size", None) is not None:
        t["batch_size"] = args.batch_size
    return gz.TrainParams(seed=seed, **t)


# ---------------------------------------------------------------------------
# output helpers


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def write_csv(path, header: dict, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> tuple[dict, list[dict]]:
    """Returns the ``# key=value`` header and the data rows as dicts."""
    header, body = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k.strip()] = v.strip()
            else:
                body.append(line)
    return header, list(csv.DictReader(body))


TRAJ_COLUMNS = ["maze_id", "run", "step", "x_px", "y_px", "x_deg", "y_deg", "ball_x_px", "ball_y_px", "ball_x_deg", "ball_y_deg"]


def trajectory_rows(maze_id: str, run: int, eyes: np.ndarray, balls: np.ndarray | None, side: int):
    eyes_deg = ed.px_to_deg(eyes, side)
    for i, (e, d) in enumerate(zip(eyes, eyes_deg)):
        if balls is not None and i >= 1:
            b = balls[i - 1]
            bd = ed.px_to_deg(b, side)
            ball = [b[0], b[1], bd[0], bd[1]]
        else:
            ball = ["", "", "", ""]
        yield [maze_id, run, i, e[0], e[1], d[0], d[1], *ball]


def write_trajectories(out_dir, header: dict, records, manifest: dict) -> Path:
    """``records`` yields ``(maze_id, run, eyes_px [n+1, 2], balls_px [n, 2] or None, side)``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    count = 0
    for maze_id, run, eyes, balls, side in records:
        rows.extend(trajectory_rows(maze_id, run, eyes, balls, side))
        count += 1
    write_csv(out_dir / "trajectories.csv", header, TRAJ_COLUMNS, rows)
    write_json(out_dir / "manifest.json", {**manifest, "n_trajectories": count})
    return out_dir / "trajectories.csv"


def read_trajectories(traj_dir) -> dict[str, list[mt.PathPoints]]:
    """Model paths in degrees, keyed by maze id, one entry per run."""
    path = Path(traj_dir)
    if path.is_dir():
        path = path / "trajectories.csv"
    if not path.is_file():
        raise CliError(f"no trajectory file at {path}")
    _, rows = read_csv(path)
    runs: dict[tuple[str, int], list] = {}
    for r in rows:
        runs.setdefault((r["maze_id"], int(r["run"])), []).append((int(r["step"]), float(r["x_deg"]), float(r["y_deg"])))
    out: dict[str, list] = {}
    for (maze_id, _), pts in sorted(runs.items()):
        pts.sort()
        out.setdefault(maze_id, []).append(mt.PathPoints(np.array([p[1:] for p in pts]), source="model"))
    return out


def human_paths(trials) -> tuple[dict[str, list[mt.PathPoints]], list]:
    paths: dict[str, list] = {}
    processed = []
    for tr in trials:
        p = ed.process_trial(tr)
        processed.append(p)
        paths.setdefault(tr.maze_id, []).append(p.path)
    return paths, processed


def load_humans(path) -> list:
    trials = ed.load_trial_dir(path)
    if not trials:
        raise CliError(f"no human trials found at {path}")
    return trials


# ---------------------------------------------------------------------------
# commands


def cmd_gen_testset(args, cfg) -> dict:
    seed = resolve_seed(args, cfg)
    n = int(pick(args.n, cfg, "testset", "n", 200))
    grid = int(pick(args.grid, cfg, "testset", "grid", 20))
    if n < 1:
        raise CliError("--n must be >= 1")
    rc = RunConfig("gen-testset", seed, {"n": n, "grid": grid})
    rng = np.random.default_rng([seed, gz.STREAM_MAZE])
    mazes = [gen_maze(rng, grid, maze_id=f"maze{i:04d}") for i in range(n)]
    save_test_set(mazes, args.out, header=rc.header())
    images = {render(m).image.tobytes() for m in mazes}
    summary = {
        "mazes": n,
        "unique_maze_ids": len({m.maze_id for m in mazes}),
        "unique_images": len(images),
        "full_coverage": all(len({c for p in m.paths for c in p.cells}) == grid * grid for m in mazes),
        "out": str(args.out),
        **rc.header(),
    }
    return summary


def cmd_synth_humans(args, cfg) -> dict:
    require_exists(args.testset)
    seed = resolve_seed(args, cfg)
    subjects = int(pick(args.subjects, cfg, "humans", "subjects", 4))
    repeats = int(pick(args.repeats, cfg, "humans", "repeats", 1))
    rc = RunConfig("synth-humans", seed, {"testset": str(args.testset), "subjects": subjects, "repeats": repeats})
    mazes = [render(m) for m in load_test_set(args.testset)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, trials in simulate_subjects(mazes, subjects, repeats, seed).items():
        ed.save_trials(trials, out / f"{sid}.trials", header={**rc.header(), "subject_id": sid, "synthetic": "true"})
    write_json(out / "manifest.json", rc.manifest(subjects=subjects, trials_per_subject=len(mazes) * repeats))
    return {"subjects": subjects, "trials": subjects * len(mazes) * repeats, "out": str(out), **rc.header()}


def cmd_fit_dist(args, cfg) -> dict:
    require_exists(args.human)
    seed = resolve_seed(args, cfg)
    rc = RunConfig("fit-dist", seed, {"human": str(args.human)})
    _, processed = human_paths(load_humans(args.human))
    vectors = [e.vector for p in processed for e in p.saccades]
    counts = [len(p.saccades) for p in processed]
    if not vectors:
        raise CliError("no saccades detected in the human data")
    ed.save_distribution(np.array(vectors), counts, args.out, header=rc.header())
    amps = np.hypot(*np.array(vectors).T)
    return {
        "saccades": len(vectors),
        "trials": len(counts),
        "mean_amplitude_deg": float(amps.mean()),
        "mean_saccades_per_trial": float(np.mean(counts)),
        "out": str(args.out),
        **rc.header(),
    }


def _loss_rows(path) -> list[tuple[int, float]]:
    p = Path(str(path) + ".loss.csv")
    if not p.is_file():
        return []
    _, rows = read_csv(p)
    return [(int(r["iteration"]), float(r["loss"])) for r in rows]


def run_training(rc: RunConfig, config: gz.ModelConfig, tp: gz.TrainParams, out, resume=None, grid: int = 20):
    model = adam = None
    start = 0
    history: list[tuple[int, float]] = []
    if resume is not None:
        params, adam, meta = dc.load_checkpoint(resume)
        saved = gz.ModelConfig.from_dict(meta["model"])
        if saved != config:
            raise CliError(f"resume checkpoint {resume} was trained with a different model config")
        model = gz.GazeRNN(config, params)
        start = int(meta["iteration"])
        history = [r for r in _loss_rows(resume) if r[0] <= start]
        if start > tp.iterations:
            raise CliError(f"checkpoint is at iteration {start}, beyond --iters {tp.iterations}")
    try:
        res = gz.train(config, tp, gz.default_maze_source(config, tp), model, adam, start)
    except gz.TrainingAborted as exc:
        last = gz.GazeRNN(config, {k: dc.DValue(v, requires_grad=True, name=k) for k, v in exc.last_good_params.items()})
        path = str(out) + ".last_good"
        dc.save_checkpoint(path, last.params, exc.last_good_state, _ckpt_meta(rc, config, tp, exc.iteration, grid))
        raise CliError(f"training aborted at iteration {exc.iteration}: {exc}; last good checkpoint at {path}") from exc
    history += [(start + i + 1, v) for i, v in enumerate(res.losses)]
    final = history[-1][1] if history else float("nan")
    meta = _ckpt_meta(rc, config, tp, tp.iterations, grid)
    dc.save_checkpoint(out, res.model.params, res.adam, meta)
    write_csv(str(out) + ".loss.csv", rc.header(), ["iteration", "loss"], history)
    manifest = rc.manifest(
        checkpoint=str(out),
        iteration=tp.iterations,
        final_loss=final,
        objective=config.objective.value,
        beta=config.beta,
        model=config.to_dict(),
        resumed_from=None if resume is None else str(resume),
    )
    write_json(str(out) + ".manifest.json", manifest)
    return res, manifest


def _ckpt_meta(rc, config, tp, iteration, grid) -> dict:
    return {
        **rc.header(),
        "model": config.to_dict(),
        "train": asdict(tp),
        "iteration": int(iteration),
        "grid_size": grid,
    }


def cmd_train(args, cfg) -> dict:
    require_exists(args.resume)
    seed = resolve_seed(args, cfg)
    grid = int(pick(args.grid, cfg, "train", "grid_size", 20))
    config = model_config(cfg, grid, objective=args.objective)
    tp = train_params(cfg, args, seed)
    rc = RunConfig("train", seed, {"model": config.to_dict(), "train": asdict(tp), "grid_size": grid})
    _, manifest = run_training(rc, config, tp, args.out, args.resume, grid)
    return {k: manifest[k] for k in ("checkpoint", "iteration", "final_loss", "objective", "beta", "config_hash", "seed")}


def load_model(ckpt, cfg: dict) -> tuple[gz.GazeRNN, dict]:
    try:
        params, _, meta = dc.load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read checkpoint {ckpt}: {exc}") from exc
    config = gz.ModelConfig.from_dict(meta["model"])
    if "model" in cfg:
        wanted = model_config(cfg, int(meta.get("grid_size", (config.fovea.image_side + 1) // 2)))
        if wanted != config:
            raise CliError(f"checkpoint {ckpt} does not match the model section of the config")
    shapes = gz.GazeRNN.param_shapes(config)
    got = {k: tuple(v.shape) for k, v in params.items()}
    if got != shapes:
        raise CliError(f"checkpoint {ckpt} parameters do not match its recorded config")
    return gz.GazeRNN(config, params), meta


def rollout_all(model: gz.GazeRNN, mazes, runs: int, seed: int):
    """Two (or ``runs``) stochastic rollouts per maze, batched over the test set."""
    side = model.config.fovea.image_side
    bad = [m.maze_id for m in mazes if m.side != side]
    if bad:
        raise CliError(f"test set image side does not match the model (side {side}): {bad[:3]}")
    images = np.stack([m.image for m in mazes])
    entrances = np.stack([m.entrance_px for m in mazes])
    out = []
    for run in range(runs):
        rng = np.random.default_rng([seed, gz.STREAM_NOISE, run])
        with dc.no_grad():
            traj = gz.unroll(model, images, entrances, rng)
        eyes, balls = traj.eye_array(), traj.ball_array()  # [n+1, B, 2], [n, B, 2]
        for b, m in enumerate(mazes):
            out.append((m.maze_id, run, eyes[:, b], balls[:, b], side))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


def cmd_eval(args, cfg) -> dict:
    require_exists(args.ckpt, args.testset)
    seed = resolve_seed(args, cfg)
    runs = int(pick(args.runs, cfg, "eval", "runs", 2))
    model, meta = load_model(args.ckpt, cfg)
    rc = RunConfig("eval", seed, {"checkpoint_hash": meta.get("config_hash"), "testset": str(args.testset), "runs": runs})
    mazes = [render(m) for m in load_test_set(args.testset)]
    records = rollout_all(model, mazes, runs, seed)
    label = args.label or Path(args.ckpt).stem
    write_trajectories(args.out, rc.header(), records, rc.manifest(model=label, checkpoint=str(args.ckpt), mazes=len(mazes), runs=runs))
    return {"trajectories": len(records), "out": str(args.out), **rc.header()}


def compare_scores(model_sets: dict[str, dict], humans: dict[str, list], metric_names: list[str]):
    rows = []
    skipped: dict[str, list] = {}
    for name, paths in model_sets.items():
        missing = sorted(set(paths) - set(humans))
        if missing:
            skipped[name] = missing
        shared = {k: v for k, v in paths.items() if k in humans}
        for metric in metric_names:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                s = mt.all_pairs_score(shared, humans, mt.METRICS[metric])
            rows.append([name, metric, s.mean, s.ci_low, s.ci_high, s.n_pairs])
    for metric in metric_names:
        s = mt.between_human_score(humans, mt.METRICS[metric])
        rows.append(["between-human", metric, s.mean, s.ci_low, s.ci_high, s.n_pairs])
    return rows, skipped


def parse_metrics(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in mt.METRICS]
    if bad or not names:
        raise CliError(f"unknown metric(s) {bad}; choose from {sorted(mt.METRICS)}")
    return names


def cmd_compare(args, cfg) -> dict:
    require_exists(args.human, *args.model_trajs)
    seed = resolve_seed(args, cfg)
    metric_names = parse_metrics(args.metrics)
    rc = RunConfig("compare", seed, {"models": [str(p) for p in args.model_trajs], "human": str(args.human), "metrics": metric_names})
    humans, _ = human_paths(load_humans(args.human))
    model_sets = {}
    for p in args.model_trajs:
        man = Path(p) / "manifest.json"
        name = json.loads(man.read_text()).get("model", Path(p).name) if man.is_file() else Path(p).name
        model_sets[name] = read_trajectories(p)
    rows, skipped = compare_scores(model_sets, humans, metric_names)
    for name, ids in skipped.items():
        _warn({"warning": "maze_id mismatch, skipped", "model": name, "maze_ids": ids})
    header = {**rc.header(), "units": "deg"}
    if "area" in metric_names:
        header["area_closure"] = mt.AREA_CLOSURE
    write_csv(args.out, header, ["model", "metric", "mean", "ci_low", "ci_high", "n_pairs"], rows)
    return {"rows": len(rows), "skipped": skipped, "out": str(args.out), **rc.header()}


def cmd_baseline(args, cfg) -> dict:
    if not Path(args.dist).is_file():
        raise CliError(f"distribution file not found: {args.dist}")
    require_exists(args.testset)
    seed = resolve_seed(args, cfg)
    n_cand = int(pick(args.candidates, cfg, "baseline", "candidates", 2000))
    joint = bool(pick(args.joint or None, cfg, "baseline", "joint", False))
    rc = RunConfig("baseline", seed, {"dist": str(args.dist), "testset": str(args.testset), "candidates": n_cand, "joint": joint})
    amps, angles, counts = ed.load_distribution_file(args.dist)
    try:
        dist = bl.from_polar(amps, angles, counts)
    except ValueError as exc:
        raise CliError(f"{args.dist}: {exc}") from exc
    mazes = [render(m) for m in load_test_set(args.testset)]
    results, records = [], []
    for i, m in enumerate(mazes):
        rng = np.random.default_rng([seed, STREAM_SAMPLING, i])
        traj = bl.solve(m, dist, n_cand, rng, joint)
        pts = traj.eye_array()
        d = float(np.linalg.norm(pts[-1] - m.exit_px))
        results.append([m.maze_id, d, int(d <= 5.0)])
        records.append((m.maze_id, 0, pts, None, m.side))
    rate = float(np.mean([r[2] for r in results]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "baseline.csv", rc.header(), ["maze_id", "final_distance_px", "within_5px"], results)
    write_trajectories(out, rc.header(), records, rc.manifest(model="baseline", success_rate=rate, mazes=len(mazes)))
    return {"success_rate": rate, "mazes": len(mazes), "candidates": n_cand, "out": str(out), **rc.header()}


def cmd_saccade_dist(args, cfg) -> dict:
    if (args.trajs is None) == (args.human is None):
        raise CliError("give exactly one of --trajs or --human")
    require_exists(args.trajs, args.human)
    seed = resolve_seed(args, cfg)
    n = int(pick(args.sample, cfg, "saccade_dist", "sample", 1000))
    src = str(args.trajs or args.human)
    rc = RunConfig("saccade-dist", seed, {"source": src, "sample": n})
    if args.trajs is not None:
        vecs = [mt.saccade_vectors(p) for runs in read_trajectories(args.trajs).values() for p in runs if len(p.points) > 1]
    else:
        _, processed = human_paths(load_humans(args.human))
        vecs = [np.array([e.vector for e in p.saccades]) for p in processed if p.saccades]
    vectors = np.concatenate(vecs) if vecs else np.zeros((0, 2))
    if len(vectors) == 0:
        raise CliError(f"no saccade vectors in {src}")
    rng = np.random.default_rng([seed, STREAM_SAMPLING])
    idx = rng.choice(len(vectors), size=n, replace=len(vectors) < n)
    picked = vectors[idx]
    rows = [[k, v[0], v[1], float(np.hypot(*v)), float(np.arctan2(v[1], v[0]))] for k, v in enumerate(picked)]
    write_csv(args.out, rc.header(), ["index", "dx_deg", "dy_deg", "amplitude_deg", "angle_rad"], rows)
    return {"rows": n, "population": len(vectors), "out": str(args.out), **rc.header()}


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"bad number list {text!r}") from exc


def cmd_sweep_tau(args, cfg) -> dict:
    require_exists(args.testset, args.human)
    seed = resolve_seed(args, cfg)
    taus = parse_floats(args.taus) if args.taus else list(cfg.get("sweep", {}).get("taus", TAU_SWEEP))
    objectives = args.objectives.split(",") if args.objectives else list(cfg.get("sweep", {}).get("objectives", [o.value for o in gz.Objective]))
    try:
        objectives = [gz.Objective(o.strip()).value for o in objectives]
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    runs = int(pick(args.runs, cfg, "eval", "runs", 2))
    mazes = [render(m) for m in load_test_set(args.testset)]
    sides = {m.side for m in mazes}
    if len(sides) != 1:
        raise CliError("test set mixes maze sizes")
    grid = (sides.pop() + 1) // 2
    tp = train_params(cfg, args, seed)
    humans, _ = human_paths(load_humans(args.human))
    rc = RunConfig("sweep-tau", seed, {
        "taus": taus, "objectives": objectives, "train": asdict(tp), "runs": runs,
        "testset": str(args.testset), "human": str(args.human), "model": cfg.get("model", {}),
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid_rows = []
    for tau in taus:
        for obj in objectives:
            config = model_config(cfg, grid, objective=obj, tau=tau)
            sub = RunConfig("train", seed, {"model": config.to_dict(), "train": asdict(tp), "grid_size": grid})
            ckpt = out / f"tau{tau:g}_{obj}.ckpt"
            res, _ = run_training(sub, config, tp, ckpt, grid=grid)
            records = rollout_all(res.model, mazes, runs, seed)
            paths: dict[str, list] = {}
            for maze_id, _, eyes, _, side in records:
                paths.setdefault(maze_id, []).append(mt.PathPoints(ed.px_to_deg(eyes, side), "model"))
            rows, _ = compare_scores({obj: paths}, humans, ["nn", "area"])
            by = {r[1]: r for r in rows if r[0] == obj}
            grid_rows.append([tau, obj, *by["nn"][2:], *by["area"][2:]])
    cols = ["tau", "objective"] + [f"{m}_{k}" for m in ("nn", "area") for k in ("mean", "ci_low", "ci_high", "n_pairs")]
    header = {**rc.header(), "units": "deg", "area_closure": mt.AREA_CLOSURE}
    write_csv(out / "sweep.csv", header, cols, grid_rows)
    table = []
    for section, col in (("nearest_neighbors", 2), ("area_between_paths", 6)):
        for obj in objectives:
            table.append([section, obj, *[r[col] for tau in taus for r in grid_rows if r[0] == tau and r[1] == obj]])
    write_csv(out / "table.csv", header, ["section", "objective", *[f"tau={t:g}" for t in taus]], table)
    write_json(out / "manifest.json", rc.manifest(rows=len(grid_rows)))
    return {"rows": len(grid_rows), "out": str(out), **rc.header()}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", "UsageError", message)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mazegaze", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.set_defaults(func=fn)
        return s

    s = command("gen-testset", cmd_gen_testset, "generate a test set of mazes")
    s.add_argument("--n", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--out", required=True)

    s = command("synth-humans", cmd_synth_humans, "simulate eye-tracking subjects on a test set")
    s.add_argument("--testset", required=True)
    s.add_argument("--subjects", type=int)
    s.add_argument("--repeats", type=int)
    s.add_argument("--out", required=True)

    s = command("fit-dist", cmd_fit_dist, "fit the saccade distribution from human trials")
    s.add_argument("--human", required=True)
    s.add_argument("--out", required=True)

    s = command("train", cmd_train, "train a gaze RNN")
    s.add_argument("--objective", choices=[o.value for o in gz.Objective])
    s.add_argument("--iters", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--resume")
    s.add_argument("--out", required=True)

    s = command("eval", cmd_eval, "roll out a trained model on a test set")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--testset", required=True)
    s.add_argument("--runs", type=int)
    s.add_argument("--label")
    s.add_argument("--out", required=True)

    s = command("compare", cmd_compare, "score model trajectories against human paths")
    s.add_argument("--model-trajs", nargs="+", required=True)
    s.add_argument("--human", required=True)
    s.add_argument("--metrics", default="nn,area")
    s.add_argument("--out", required=True)

    s = command("baseline", cmd_baseline, "run the random saccade-path baseline")
    s.add_argument("--dist", required=True)
    s.add_argument("--testset", required=True)
    s.add_argument("--candidates", type=int)
    s.add_argument("--joint", action="store_true", help="sample amplitude and angle as pairs")
    s.add_argument("--out", required=True)

    s = command("saccade-dist", cmd_saccade_dist, "sample saccade vectors for plotting")
    s.add_argument("--trajs")
    s.add_argument("--human")
    s.add_argument("--sample", type=int)
    s.add_argument("--out", required=True)

    s = command("sweep-tau", cmd_sweep_tau, "train and score one model per (tau, objective)")
    s.add_argument("--taus")
    s.add_argument("--objectives")
    s.add_argument("--iters", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--testset", required=True)
    s.add_argument("--human", required=True)
    s.add_argument("--out", required=True)
    return p


def _emit_error(command, kind, message) -> None:
    sys.stderr.write(json.dumps({"status": "error", "command": command, "error": kind, "message": message}) + "\n")


def _warn(record: dict) -> None:
    sys.stderr.write(json.dumps(record) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        summary = args.func(args, cfg)
    except (CliError, ed.TrialFormatError, gz.RolloutError, dc.ContractError, dc.DimensionError, OSError, ValueError) as exc:
        _emit_error(args.command, type(exc).__name__, str(exc))
        return 1
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
