import csv
import math

import numpy as np
import pytest

from oracles import dijkstra
from rsim.errors import ReachError, TaskError, WorldError
from rsim.toyenv import (
    ACTIONS, HEADINGS, AgentState, GridWorld, WorldObject, geodesic, iou, iou_max, load_demo_world,
    load_world, make_split, observation, observation_size, open_room, reset, run_episode, save_world, step,
    write_episode_log,
)


def obj(oid, cls, *cells):
    return WorldObject(oid, cls, tuple(cells))


@pytest.fixture
def room():
    return open_room(7, 7, [obj("t", "chair", (3, 1)), obj("u", "lamp", (0, 6))])


# -- step / reward -----------------------------------------------------------

def test_approach_step_reward(room):
    s = AgentState((3, 3), "N")
    s2, r, done = step(room, s, "t", "move_forward")
    assert s2.cell == (3, 2) and r == 0.05 and not done


def test_stop_at_best_view_pays_one(room):
    # target sits 3 cells ahead, centered in the framing box
    s = AgentState((3, 4), "N")
    assert iou(room, s, "t") == iou_max(room, "t") == 1.0
    _, r, done = step(room, s, "t", "stop")
    assert r == 1.0 and done


def test_blind_stop_pays_zero(room):
    s = AgentState((3, 4), "S")
    assert iou(room, s, "t") == 0.0
    assert step(room, s, "t", "stop")[1] == 0.0


def test_moving_away_and_turning(room):
    _, r, _ = step(room, AgentState((3, 3), "S"), "t", "move_forward")
    assert r == -0.05
    s2, r, _ = step(room, AgentState((3, 3), "S"), "t", "turn_left")
    assert r == 0.0 and s2.heading == "E" and s2.cell == (3, 3)
    assert step(room, AgentState((3, 3), "S"), "t", "turn_right")[0].heading == "W"


def test_blocked_move_is_noop():
    w = open_room(4, 4, [obj("t", "x", (3, 3))], walls=[(1, 0)])
    s2, r, _ = step(w, AgentState((0, 0), "E"), "t", "move_forward")
    assert s2.cell == (0, 0) and r == 0.0
    s3, r, _ = step(w, AgentState((0, 0), "N"), "t", "move_forward")
    assert s3.cell == (0, 0) and r == 0.0


def test_unknown_target_and_action(room):
    with pytest.raises(TaskError):
        step(room, AgentState((3, 3), "N"), "nope", "stop")
    with pytest.raises(ValueError):
        step(room, AgentState((3, 3), "N"), "t", "jump")
    with pytest.raises(ValueError):
        step(room, AgentState((3, 3), "N", done=True), "t", "stop")


def test_step_cap_ends_without_stop_reward():
    w = open_room(5, 5, [obj("t", "x", (0, 0))], episode_cap=3)
    s = AgentState((4, 4), "N")
    rewards = []
    for _ in range(3):
        s, r, done = step(w, s, "t", "turn_left")
        rewards.append(r)
    assert done and s.steps == 3 and rewards == [0.0, 0.0, 0.0]
    s = AgentState((2, 2), "N", steps=2)
    s, r, done = step(w, s, "t", "move_forward")
    assert done and r == 0.05


def test_telescoping_exact_random_trajectories():
    w = load_demo_world()
    rng = np.random.default_rng(3)
    for k in range(1000):
        target = w.object_ids[k % len(w.object_ids)]
        s0 = reset(w, rng)
        s, rewards = s0, []
        for _ in range(int(rng.integers(1, 60))):
            s, r, done = step(w, s, target, ACTIONS[int(rng.integers(3))])
            rewards.append(r)
            if done:
                break
        delta = w.geo_to_target(s.cell, target) - w.geo_to_target(s0.cell, target)
        assert math.fsum(rewards) == -0.05 * delta


def test_episode_determinism():
    w = load_demo_world()
    actions = np.random.default_rng(0).integers(4, size=40)

    def play(seed):
        s = reset(w, np.random.default_rng(seed))
        out = []
        for a in actions:
            s, r, done = step(w, s, "tv_1", ACTIONS[a])
            out.append((s, r))
            if done:
                break
        return out

    assert play(5) == play(5)


# -- iou ----------------------------------------------------------------------

def test_iou_out_of_view(room):
    assert iou(room, AgentState((6, 6), "E"), "t") == 0.0


def test_iou_two_cell_object_half_in_box():
    # agent at (3,6) facing N: box covers x 2..4, y 2..4; window covers x 1..5, y 1..5.
    # cells (4,3) inside the box and (5,3) in the window edge -> 1 / 2
    w = open_room(7, 7, [obj("sofa", "sofa", (4, 3), (5, 3))])
    assert iou(w, AgentState((3, 6), "N"), "sofa") == 0.5


def test_iou_other_object_in_box_enlarges_union():
    w = open_room(7, 7, [obj("t", "a", (3, 3)), obj("o", "b", (2, 3))])
    assert iou(w, AgentState((3, 6), "N"), "t") == 0.5


def test_iou_hidden_behind_wall():
    w = open_room(7, 7, [obj("t", "a", (3, 2))], walls=[(3, 4)])
    assert iou(w, AgentState((3, 6), "N"), "t") == 0.0
    assert iou(w, AgentState((3, 5), "N"), "t") == 0.0


def test_iou_bounded_by_max():
    w = load_demo_world()
    for t in w.object_ids:
        best = iou_max(w, t)
        assert 0 < best <= 1
        for c in w.free_cells():
            if w.geo_to_target(c, t) <= w.iou_radius:
                for h in HEADINGS:
                    assert 0 <= iou(w, AgentState(c, h), t) <= best


def test_iou_max_open_room(room):
    assert iou_max(room, "t") == 1.0


def _alcove_world():
    # target sits in a one-cell pocket whose straight-on sightline is walled off
    walls = [(2, 0), (4, 0), (3, 2)]
    return open_room(7, 7, [obj("t", "a", (3, 0))], walls=walls)


def test_iou_max_alcove_matches_enumeration():
    w = _alcove_world()
    free = set(w.free_cells())
    best = 0.0
    for c in free:
        d = dijkstra(free, c, (3, 0))
        if d is not None and d <= 8:
            for h in HEADINGS:
                best = max(best, iou(w, AgentState(c, h), "t"))
    assert iou_max(w, "t") == best


def test_iou_max_monotone_in_radius():
    w = _alcove_world()
    vals = [iou_max(w, "t", r) for r in range(1, 9)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert iou_max(w, "t", 1) <= iou_max(w, "t", 5)
    with pytest.raises(ValueError):
        iou_max(w, "t", 0)


# -- geodesic -------------------------------------------------------------------

def test_geodesic_adjacent_and_same(room):
    assert geodesic(room, (2, 2), (2, 3)) == 1
    assert geodesic(room, (2, 2), (2, 2)) == 0


def _maze(seed=3, n=10):
    rng = np.random.default_rng(seed)
    walls = {(x, y) for x in range(n) for y in range(n) if rng.uniform() < 0.28}
    walls -= {(0, 0)}
    w = GridWorld(n, n, walls, (obj("t", "a", (0, 0)),), (((0, 0), "N"),))
    return w


def test_geodesic_matches_dijkstra():
    w = _maze()
    free = set(w.free_cells())
    reach = [c for c in sorted(free) if dijkstra(free, (0, 0), c) is not None]
    assert len(reach) > 30
    for a in reach[::3]:
        for b in reach[::2]:
            assert geodesic(w, a, b) == dijkstra(free, a, b)
    cut_off = sorted(free - set(reach))
    if cut_off:
        with pytest.raises(ReachError):
            geodesic(w, (0, 0), cut_off[0])


def test_geodesic_metric_properties():
    w = _maze()
    reach = sorted(w.target_distances("t"))
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = (reach[i] for i in rng.integers(len(reach), size=3))
        assert geodesic(w, a, b) == geodesic(w, b, a)
        assert geodesic(w, a, c) <= geodesic(w, a, b) + geodesic(w, b, c)


def test_geodesic_blocked_cell(room):
    w = open_room(3, 3, [obj("t", "a", (0, 0))], walls=[(1, 1)])
    with pytest.raises(ReachError):
        geodesic(w, (1, 1), (0, 0))


# -- split ----------------------------------------------------------------------

def test_split_six_objects():
    ids = [f"o{i}" for i in range(6)]
    sp = make_split(ids, 0)
    assert len(sp.a) == len(sp.b) == 3
    assert set(sp.a).isdisjoint(sp.b) and set(sp.a) | set(sp.b) == set(ids)


def test_split_two_objects_any_seed():
    for seed in range(20):
        sp = make_split(["x", "y"], seed)
        assert len(sp.a) == len(sp.b) == 1


def test_split_odd_and_determinism():
    ids = list("abcde")
    sp = make_split(ids, 4)
    assert (len(sp.a), len(sp.b)) == (2, 3)
    assert make_split(ids, 4) == sp
    outcomes = {make_split([f"o{i}" for i in range(6)], s).a for s in range(100)}
    assert len(outcomes) >= 2
    with pytest.raises(ValueError):
        make_split(["x"], 0)


# -- world invariants and files -------------------------------------------------------

def test_world_invariants():
    with pytest.raises(WorldError):
        open_room(4, 4, [obj("t", "a", (1, 1)), obj("t", "b", (2, 2))])
    with pytest.raises(WorldError):
        open_room(5, 5, [obj(f"c{i}", "chair", (i, 0)) for i in range(3)])
    with pytest.raises(WorldError):
        GridWorld(4, 4, {(1, 1)}, (obj("t", "a", (1, 1)),), (((0, 0), "N"),))
    with pytest.raises(WorldError):
        GridWorld(4, 4, {(1, 1)}, (obj("t", "a", (0, 0)),), (((1, 1), "N"),))
    with pytest.raises(WorldError):
        # object walled into a corner
        GridWorld(4, 4, {(1, 0), (0, 1), (1, 1)}, (obj("t", "a", (0, 0)),), (((3, 3), "N"),))
    with pytest.raises(WorldError):
        GridWorld(4, 4, set(), (obj("t", "a", (0, 0)),), ())
    # two instances of one class are fine
    open_room(5, 5, [obj("c1", "chair", (0, 0)), obj("c2", "chair", (4, 4))])


def test_world_file_roundtrip(tmp_path):
    w = load_demo_world()
    save_world(w, tmp_path / "w.json")
    back = load_world(tmp_path / "w.json")
    assert back == w
    bad = tmp_path / "bad.json"
    bad.write_text('{"width": 3}')
    with pytest.raises(WorldError):
        load_world(bad)


def test_demo_world_shape():
    w = load_demo_world()
    assert (w.width, w.height) == (8, 8)
    assert len(w.object_ids) == 6
    assert len(w.class_ids) == 6


def test_observation_one_hot(room):
    o = observation(room, AgentState((3, 4), "N"))
    assert o.shape == (observation_size(room),)
    cells = o.reshape(room.view_size**2, -1)
    assert np.all(cells.sum(axis=1) == 1.0)


def test_episode_log(tmp_path, room):
    actions = iter(["move_forward", "turn_left", "stop"])
    recs = run_episode(room, "t", lambda s: next(actions), AgentState((3, 4), "N"))
    assert [r["action"] for r in recs] == ["move_forward", "turn_left", "stop"]
    write_episode_log(recs, tmp_path / "ep.csv")
    rows = list(csv.DictReader(open(tmp_path / "ep.csv")))
    assert list(rows[0]) == ["step", "cell_x", "cell_y", "heading", "action", "reward", "done"]
    assert rows[0]["reward"] == "0.05" and rows[-1]["done"] == "1"
