"""Gridworld object-navigation task.

The agent occupies one cell and faces N, E, S or W. It sees a V x V window of
cells directly ahead (forward distance 1..V, lateral offset -V//2..V//2),
occluded by walls along the line of sight. The framing box is the central
(V-2) x (V-2) part of that window.

Rewards: ``stop`` pays IoU_t / IoU_max; every other action pays
``-0.05 * (geo_after - geo_before)`` where geo is the BFS distance from the
agent to the nearest cell of the target object.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ReachError, TaskError, WorldError

Cell = tuple[int, int]

HEADINGS = ("N", "E", "S", "W")
_VEC = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}
ACTIONS = ("move_forward", "turn_left", "turn_right", "stop")
SHAPING = -0.05
MAX_INSTANCES_PER_CLASS = 2

# observation channels per window cell; object classes follow
HIDDEN, FREE, WALL = 0, 1, 2
N_BASE_CHANNELS = 3


@dataclass(frozen=True)
class WorldObject:
    object_id: str
    class_id: str
    cells: tuple[Cell, ...]

    @property
    def cell(self) -> Cell:
        return self.cells[0]


@dataclass(frozen=True)
class AgentState:
    cell: Cell
    heading: str
    steps: int = 0
    done: bool = False


@dataclass(frozen=True)
class TargetSplit:
    a: tuple[str, ...]
    b: tuple[str, ...]

    def __post_init__(self):
        if set(self.a) & set(self.b):
            raise ValueError("split sides overlap")
        if abs(len(self.a) - len(self.b)) > 1:
            raise ValueError("split sides differ in size by more than one")

    def side(self, label: str) -> tuple[str, ...]:
        return {"A": self.a, "B": self.b}[label.upper()]

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b)}


@dataclass
class GridWorld:
    width: int
    height: int
    walls: frozenset
    objects: tuple[WorldObject, ...]
    start_poses: tuple[tuple[Cell, str], ...]
    view_size: int = 5
    episode_cap: int = 200
    iou_radius: int = 8
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.walls = frozenset(tuple(c) for c in self.walls)
        self.objects = tuple(self.objects)
        self.start_poses = tuple((tuple(c), h) for c, h in self.start_poses)
        if self.view_size < 3 or self.view_size % 2 == 0:
            raise WorldError(f"view_size must be odd and >= 3, got {self.view_size}")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise WorldError(f"object ids are not unique: {ids}")
        counts = Counter(o.class_id for o in self.objects)
        over = {k: v for k, v in counts.items() if v > MAX_INSTANCES_PER_CLASS}
        if over:
            raise WorldError(f"classes with more than {MAX_INSTANCES_PER_CLASS} instances: {over}")
        for o in self.objects:
            for c in o.cells:
                if self.blocked(c):
                    raise WorldError(f"object {o.object_id!r} sits on blocked cell {c}")
        if not self.start_poses:
            raise WorldError("world needs at least one start pose")
        for c, h in self.start_poses:
            if self.blocked(c):
                raise WorldError(f"start pose on blocked cell {c}")
            if h not in HEADINGS:
                raise WorldError(f"bad heading {h!r}")
        reach = self._bfs([self.start_poses[0][0]])
        for c, _ in self.start_poses:
            if c not in reach:
                raise WorldError(f"start {c} is disconnected from start {self.start_poses[0][0]}")
        for o in self.objects:
            if not any(c in reach for c in o.cells):
                raise WorldError(f"object {o.object_id!r} is unreachable from the start poses")
        self._by_id = {o.object_id: o for o in self.objects}
        self._occupant = {c: o for o in self.objects for c in o.cells}
        self.class_ids = sorted({o.class_id for o in self.objects})

    # -- geometry ---------------------------------------------------------

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def blocked(self, c: Cell) -> bool:
        return not self.in_bounds(c) or c in self.walls

    def free_cells(self) -> list[Cell]:
        return [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in self.walls]

    def neighbors(self, c: Cell) -> Iterable[Cell]:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (c[0] + dx, c[1] + dy)
            if not self.blocked(n):
                yield n

    def _bfs(self, sources: Sequence[Cell]) -> dict[Cell, int]:
        dist = {s: 0 for s in sources}
        queue = deque(sources)
        while queue:
            c = queue.popleft()
            for n in self.neighbors(c):
                if n not in dist:
                    dist[n] = dist[c] + 1
                    queue.append(n)
        return dist

    def object(self, target: str) -> WorldObject:
        try:
            return self._by_id[target]
        except KeyError:
            raise TaskError(f"unknown target {target!r}") from None

    @property
    def object_ids(self) -> list[str]:
        return [o.object_id for o in self.objects]

    def target_distances(self, target: str) -> dict[Cell, int]:
        """BFS distance from every reachable cell to the nearest cell of ``target``."""
        key = ("dist", target)
        if key not in self._cache:
            self._cache[key] = self._bfs(list(self.object(target).cells))
        return self._cache[key]

    def geo_to_target(self, cell: Cell, target: str) -> int:
        d = self.target_distances(target).get(cell)
        if d is None:
            raise ReachError(f"target {target!r} is unreachable from {cell}")
        return d

    # -- view ---------------------------------------------------------------

    def window_cells(self, cell: Cell, heading: str) -> list[tuple[int, int, Cell]]:
        """(forward, lateral, cell) for every cell of the view window, row-major."""
        dx, dy = _VEC[heading]
        rx, ry = -dy, dx
        half = self.view_size // 2
        out = []
        for f in range(1, self.view_size + 1):
            for lat in range(-half, half + 1):
                out.append((f, lat, (cell[0] + f * dx + lat * rx, cell[1] + f * dy + lat * ry)))
        return out

    def in_box(self, forward: int, lateral: int) -> bool:
        return 2 <= forward <= self.view_size - 1 and abs(lateral) <= self.view_size // 2 - 1

    def visible(self, origin: Cell, cell: Cell) -> bool:
        """True when no wall lies strictly between the two cell centers."""
        key = ("los", origin, cell)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        x0, y0 = origin
        x1, y1 = cell
        n = 8 * (abs(x1 - x0) + abs(y1 - y0)) + 1
        ok = True
        for k in range(n):
            t = (k + 0.5) / n
            c = (int(np.floor(x0 + t * (x1 - x0) + 0.5)), int(np.floor(y0 + t * (y1 - y0) + 0.5)))
            if c != origin and c != cell and self.blocked(c):
                ok = False
                break
        self._cache[key] = ok
        return ok

    def occupant(self, c: Cell) -> WorldObject | None:
        return self._occupant.get(c)


def iou(w: GridWorld, s: AgentState, target: str) -> float:
    """Overlap of the visible target cells with the framing box.

    Union counts the visible target cells plus every visible box cell that
    holds any object.
    """
    obj = w.object(target)
    target_cells = set(obj.cells)
    seen_target, inter, occupied_box = set(), 0, set()
    for f, lat, c in w.window_cells(s.cell, s.heading):
        if w.blocked(c) or not w.visible(s.cell, c):
            continue
        boxed = w.in_box(f, lat)
        if c in target_cells:
            seen_target.add(c)
            if boxed:
                inter += 1
        if boxed and w.occupant(c) is not None:
            occupied_box.add(c)
    if not seen_target:
        return 0.0
    return inter / len(seen_target | occupied_box)


def iou_max(w: GridWorld, target: str, radius: int | None = None) -> float:
    """Best IoU over every pose within ``radius`` BFS steps of the target."""
    radius = w.iou_radius if radius is None else radius
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    key = ("iou_max", target, radius)
    if key not in w._cache:
        best = 0.0
        for c, d in w.target_distances(target).items():
            if d > radius:
                continue
            for h in HEADINGS:
                best = max(best, iou(w, AgentState(c, h), target))
        w._cache[key] = best
    return w._cache[key]


def geodesic(w: GridWorld, start: Cell, goal: Cell) -> int:
    """4-connected shortest-path length between two free cells."""
    start, goal = tuple(start), tuple(goal)
    for c in (start, goal):
        if w.blocked(c):
            raise ReachError(f"cell {c} is blocked")
    key = ("geo", goal)
    if key not in w._cache:
        w._cache[key] = w._bfs([goal])
    d = w._cache[key].get(start)
    if d is None:
        raise ReachError(f"no path from {start} to {goal}")
    return d


def _turn(heading: str, by: int) -> str:
    return HEADINGS[(HEADINGS.index(heading) + by) % 4]


def step(w: GridWorld, s: AgentState, target: str, action: str) -> tuple[AgentState, float, bool]:
    """Advance one action. Hitting the step cap ends the episode after the
    action's own shaping reward; no stop reward is paid."""
    w.object(target)
    if s.done:
        raise ValueError("episode already finished")
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    steps = s.steps + 1
    if action == "stop":
        best = iou_max(w, target)
        reward = iou(w, s, target) / best if best > 0 else 0.0
        return replace(s, steps=steps, done=True), reward, True

    cell, heading = s.cell, s.heading
    if action == "move_forward":
        dx, dy = _VEC[heading]
        ahead = (cell[0] + dx, cell[1] + dy)
        if not w.blocked(ahead):
            cell = ahead
    elif action == "turn_left":
        heading = _turn(heading, -1)
    else:
        heading = _turn(heading, 1)
    delta = w.geo_to_target(cell, target) - w.geo_to_target(s.cell, target)
    reward = SHAPING * delta + 0.0
    done = steps >= w.episode_cap
    return AgentState(cell, heading, steps, done), reward, done


def reset(w: GridWorld, rng: np.random.Generator) -> AgentState:
    cell, heading = w.start_poses[int(rng.integers(len(w.start_poses)))]
    return AgentState(cell, heading)


def make_split(object_ids: Sequence[str], seed) -> TargetSplit:
    """Random equal partition of the targets; the extra one, if any, goes to B."""
    ids = list(object_ids)
    if len(ids) < 2:
        raise ValueError("need at least two objects to split")
    if len(set(ids)) != len(ids):
        raise ValueError("object ids must be unique")
    perm = np.random.default_rng(seed).permutation(len(ids))
    half = len(ids) // 2
    a_idx, b_idx = sorted(perm[:half]), sorted(perm[half:])
    return TargetSplit(tuple(ids[i] for i in a_idx), tuple(ids[i] for i in b_idx))


# -- observations -------------------------------------------------------------

def observation(w: GridWorld, s: AgentState) -> np.ndarray:
    """Flattened one-hot encoding of the view window."""
    n_ch = N_BASE_CHANNELS + len(w.class_ids)
    cells = w.window_cells(s.cell, s.heading)
    obs = np.zeros((len(cells), n_ch))
    for k, (_, _, c) in enumerate(cells):
        if not w.visible(s.cell, c):
            obs[k, HIDDEN] = 1.0
        elif w.blocked(c):
            obs[k, WALL] = 1.0
        else:
            occ = w.occupant(c)
            if occ is None:
                obs[k, FREE] = 1.0
            else:
                obs[k, N_BASE_CHANNELS + w.class_ids.index(occ.class_id)] = 1.0
    return obs.ravel()


def observation_size(w: GridWorld) -> int:
    return w.view_size**2 * (N_BASE_CHANNELS + len(w.class_ids))


def all_poses(w: GridWorld) -> list[tuple[Cell, str]]:
    return [(c, h) for c in w.free_cells() for h in HEADINGS]


# -- episodes -----------------------------------------------------------------

EPISODE_COLUMNS = ("step", "cell_x", "cell_y", "heading", "action", "reward", "done")


def run_episode(
    w: GridWorld,
    target: str,
    policy: Callable[[AgentState], str],
    start: AgentState,
) -> list[dict]:
    """Roll ``policy`` from ``start`` until done; one record per step."""
    s, records = start, []
    while not s.done:
        action = policy(s)
        s, reward, done = step(w, s, target, action)
        records.append({
            "step": s.steps, "cell_x": s.cell[0], "cell_y": s.cell[1], "heading": s.heading,
            "action": action, "reward": reward, "done": done,
        })
    return records


def write_episode_log(records: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({**r, "reward": repr(float(r["reward"])), "done": int(r["done"])})


# -- world files --------------------------------------------------------------

def world_from_dict(d: dict) -> GridWorld:
    objects = []
    for o in d["objects"]:
        cells = o.get("cells") or [o["cell"]]
        objects.append(WorldObject(str(o["id"]), str(o["class"]), tuple(tuple(c) for c in cells)))
    starts = [(tuple(s["cell"]), s["heading"]) for s in d["starts"]]
    extra = {k: int(d[k]) for k in ("view_size", "episode_cap", "iou_radius") if k in d}
    return GridWorld(int(d["width"]), int(d["height"]), frozenset(tuple(c) for c in d.get("walls", [])),
                     tuple(objects), tuple(starts), **extra)


def world_to_dict(w: GridWorld) -> dict:
    return {
        "width": w.width,
        "height": w.height,
        "walls": sorted([list(c) for c in w.walls]),
        "objects": [
            {"id": o.object_id, "class": o.class_id, **({"cell": list(o.cell)} if len(o.cells) == 1
                                                          else {"cells": [list(c) for c in o.cells]})}
            for o in w.objects
        ],
        "starts": [{"cell": list(c), "heading": h} for c, h in w.start_poses],
        "view_size": w.view_size,
        "episode_cap": w.episode_cap,
        "iou_radius": w.iou_radius,
    }


def load_world(path) -> GridWorld:
    try:
        return world_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError) as exc:
        raise WorldError(f"{path}: malformed world file ({exc})") from exc


def save_world(w: GridWorld, path) -> None:
    Path(path).write_text(json.dumps(world_to_dict(w), indent=2) + "\n")


def open_room(width: int, height: int, objects: Sequence[WorldObject], walls=(), **kw) -> GridWorld:
    """World whose start poses are every free, object-free cell in every heading."""
    walls = frozenset(walls)
    taken = {c for o in objects for c in o.cells}
    starts = tuple(
        ((x, y), h)
        for y in range(height) for x in range(width)
        if (x, y) not in walls and (x, y) not in taken
        for h in HEADINGS
    )
    return GridWorld(width, height, walls, tuple(objects), starts, **kw)


def demo_world_path() -> Path:
    return Path(__file__).with_name("data") / "demo_world.json"


def load_demo_world() -> GridWorld:
    return load_world(demo_world_path())
