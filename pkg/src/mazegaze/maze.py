"""Procedural mazes built by layering non-branching random-walk paths.

A path is a random walk on a ``grid_size x grid_size`` cell grid that starts on
the perimeter, heads inward and stops on the first perimeter cell it reaches.
Paths are layered until every cell is covered; the first path is the solution.
Cell ``(r, c)`` renders to pixel ``(2r, 2c)`` and the odd pixels between two
consecutive cells of a path are opened, so a 20-cell grid gives a 39-pixel image.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# up, right, down, left; a left turn is (d - 1) % 4, a right turn (d + 1) % 4
DIRECTIONS = ((-1, 0), (0, 1), (1, 0), (0, -1))
MAX_ATTEMPTS = 1000

Cell = tuple[int, int]


class PathGenerationError(RuntimeError):
    pass


class MazeFileError(ValueError):
    pass


@dataclass(frozen=True)
class GridPath:
    cells: tuple[Cell, ...]
    entry_edgepoint: Cell
    exit_edgepoint: Cell

    @classmethod
    def from_cells(cls, cells) -> "GridPath":
        cells = tuple((int(r), int(c)) for r, c in cells)
        return cls(cells, cells[0], cells[-1])

    def reversed(self) -> "GridPath":
        return GridPath.from_cells(self.cells[::-1])


@dataclass(frozen=True)
class Maze:
    grid_size: int
    paths: tuple[GridPath, ...]
    entrance: tuple[float, float]
    exit: tuple[float, float]
    maze_id: str = ""


@dataclass
class RenderedMaze:
    image: np.ndarray
    entrance_px: np.ndarray
    exit_px: np.ndarray
    solution_polyline: np.ndarray
    maze_id: str = ""

    @property
    def side(self) -> int:
        return self.image.shape[0]

    def solution_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.solution_polyline, axis=0), axis=1)))


def cell_to_px(cell: Cell) -> tuple[float, float]:
    """Pixel coordinate ``(x, y)`` of a cell center; x is the column."""
    r, c = cell
    return (2.0 * c, 2.0 * r)


@lru_cache(maxsize=None)
def perimeter_cells(grid_size: int) -> tuple[Cell, ...]:
    n = grid_size
    return tuple((r, c) for r in range(n) for c in range(n) if r in (0, n - 1) or c in (0, n - 1))


def _on_perimeter(cell: Cell, n: int) -> bool:
    r, c = cell
    return r == 0 or c == 0 or r == n - 1 or c == n - 1


def _inward_headings(cell: Cell, n: int) -> list[int]:
    r, c = cell
    heads = []
    if r == 0:
        heads.append(2)
    if r == n - 1:
        heads.append(0)
    if c == 0:
        heads.append(1)
    if c == n - 1:
        heads.append(3)
    return heads


def _walk(rng, n: int, turn_prob: float, min_straight: int, starts: tuple[Cell, ...]) -> list[Cell] | None:
    start = starts[rng.integers(len(starts))]
    heads = _inward_headings(start, n)
    heading = heads[rng.integers(len(heads))] if len(heads) > 1 else heads[0]
    cells = [start]
    visited = {start}
    run = 0
    while True:
        r, c = cells[-1]
        if run >= min_straight:
            options = [(heading, 1.0 - turn_prob), ((heading - 1) % 4, turn_prob / 2), ((heading + 1) % 4, turn_prob / 2)]
        else:
            options = [(heading, 1.0)]
        legal = []
        for d, w in options:
            nxt = (r + DIRECTIONS[d][0], c + DIRECTIONS[d][1])
            if w > 0 and 0 <= nxt[0] < n and 0 <= nxt[1] < n and nxt not in visited:
                legal.append((d, w, nxt))
        if not legal:
            return None
        if len(legal) == 1:
            d, _, nxt = legal[0]
        else:
            u = rng.random() * sum(w for _, w, _ in legal)
            for d, w, nxt in legal:
                u -= w
                if u < 0:
                    break
        run = run + 1 if d == heading else 1
        heading = d
        cells.append(nxt)
        visited.add(nxt)
        if _on_perimeter(nxt, n):
            return cells


def gen_path(
    rng: np.random.Generator,
    grid_size: int = 20,
    turn_prob: float = 0.2,
    min_straight: int = 3,
    *,
    corner_starts: bool = True,
) -> GridPath:
    """Sample one perimeter-to-perimeter random walk.

    Each straight run between turns is at least ``min_straight`` moves long.
    Once a run is long enough the walk turns left or right with total
    probability ``turn_prob``; moves that leave the grid or revisit a cell are
    dropped before sampling.  A walk with no legal move is discarded and
    restarted.
    """
    if grid_size < 3:
        raise ValueError(f"grid_size must be >= 3, got {grid_size}")
    if not 0.0 <= turn_prob <= 1.0:
        raise ValueError(f"turn_prob must lie in [0, 1], got {turn_prob}")
    if min_straight < 1:
        raise ValueError(f"min_straight must be >= 1, got {min_straight}")
    starts = perimeter_cells(grid_size)
    if not corner_starts:
        last = grid_size - 1
        starts = tuple(s for s in starts if s not in {(0, 0), (0, last), (last, 0), (last, last)})
    for _ in range(MAX_ATTEMPTS):
        cells = _walk(rng, grid_size, turn_prob, min_straight, starts)
        if cells is not None:
            return GridPath.from_cells(cells)
    raise PathGenerationError("path generation exhausted")


def gen_maze(
    rng: np.random.Generator,
    grid_size: int = 20,
    turn_prob: float = 0.2,
    min_straight: int = 3,
    maze_id: str = "",
) -> Maze:
    """Layer random paths until every cell is covered.

    The solution path is drawn first and never starts in a corner (a corner
    walk is a two-cell stub along the edge); its entrance is a fair coin flip
    between its two ends.  Later paths that add no new cell would be fully
    occluded and are not kept.
    """
    solution = gen_path(rng, grid_size, turn_prob, min_straight, corner_starts=False)
    if rng.random() < 0.5:
        solution = solution.reversed()
    paths = [solution]
    covered = set(solution.cells)
    total = grid_size * grid_size
    while len(covered) < total:
        p = gen_path(rng, grid_size, turn_prob, min_straight)
        new = set(p.cells) - covered
        if new:
            paths.append(p)
            covered |= new
    return Maze(
        grid_size=grid_size,
        paths=tuple(paths),
        entrance=cell_to_px(solution.entry_edgepoint),
        exit=cell_to_px(solution.exit_edgepoint),
        maze_id=maze_id,
    )


def render(maze: Maze) -> RenderedMaze:
    """Rasterize a maze; earlier paths win wherever layers disagree."""
    side = 2 * maze.grid_size - 1
    image = np.zeros((side, side))
    owned = np.zeros((side, side), dtype=bool)
    for path in maze.paths:
        cells = path.cells
        links = set()
        for a, b in zip(cells[:-1], cells[1:]):
            links.add((a[0] + b[0], a[1] + b[1]))
        for r, c in cells:
            pr, pc = 2 * r, 2 * c
            if owned[pr, pc]:
                continue
            owned[pr, pc] = True
            image[pr, pc] = 1.0
            for dr, dc in DIRECTIONS:
                qr, qc = pr + dr, pc + dc
                if 0 <= qr < side and 0 <= qc < side and not owned[qr, qc]:
                    owned[qr, qc] = True
                    image[qr, qc] = 1.0 if (qr, qc) in links else 0.0
    sol = maze.paths[0].cells
    polyline = np.array([cell_to_px(c) for c in sol], dtype=float)
    return RenderedMaze(
        image=image,
        entrance_px=np.array(maze.entrance, dtype=float),
        exit_px=np.array(maze.exit, dtype=float),
        solution_polyline=polyline,
        maze_id=maze.maze_id,
    )


# ---------------------------------------------------------------------------
# test-set files: JSON lines, one maze per line, '#' lines are comments


def _record(maze: Maze) -> dict:
    rm = render(maze)
    return {
        "maze_id": maze.maze_id,
        "grid_size": maze.grid_size,
        "entrance_px": list(maze.entrance),
        "exit_px": list(maze.exit),
        "solution_polyline": rm.solution_polyline.tolist(),
        "image": ["".join("1" if v else "0" for v in row) for row in rm.image],
        "paths": [[list(c) for c in p.cells] for p in maze.paths],
    }


def save_test_set(mazes, path, header: dict | None = None) -> None:
    lines = []
    if header:
        lines.append("# " + json.dumps(header, sort_keys=True))
    lines.extend(json.dumps(_record(m)) for m in mazes)
    Path(path).write_text("\n".join(lines) + "\n")


def _maze_from_record(rec: dict) -> Maze:
    paths = tuple(GridPath.from_cells(p) for p in rec["paths"])
    maze = Maze(
        grid_size=int(rec["grid_size"]),
        paths=paths,
        entrance=tuple(float(v) for v in rec["entrance_px"]),
        exit=tuple(float(v) for v in rec["exit_px"]),
        maze_id=str(rec["maze_id"]),
    )
    expected = _record(maze)
    for key in ("entrance_px", "exit_px", "solution_polyline", "image"):
        if expected[key] != rec[key]:
            raise ValueError(f"field {key!r} is inconsistent with the stored paths")
    return maze


def load_test_set(path) -> list[Maze]:
    """Parse a test-set file; any bad record aborts the whole load."""
    mazes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        m = re.search(r'"maze_id"\s*:\s*"([^"]*)"', line)
        label = m.group(1) if m else "<unknown>"
        try:
            rec = json.loads(line)
            mazes.append(_maze_from_record(rec))
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise MazeFileError(f"{path}:{lineno}: bad record for maze_id {label}: {exc}") from exc
    return mazes


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    return json.loads(first[1:]) if first.startswith("#") else {}
