"""Small shared scenes and batches."""

import math

import numpy as np

from guidedmotion.batch import collate
from guidedmotion.intentions import generate_intention_points
from guidedmotion.scenario import normalize_angle, scenario_from_dict, scenario_to_dict
from guidedmotion.vectorize import build_inputs
from guidedmotion.worlds import WorldSpec, generate


def tiny_batch(n=2, k=4, history_len=4, future_len=5, max_polylines=6, agent_count=3, dtype="float64"):
    inputs, points = [], []
    for seed in range(n):
        s = generate(WorldSpec(seed=seed, agent_count=agent_count, history_len=history_len,
                               future_len=future_len))
        target = s.targets[0]
        inputs.append(build_inputs(s, target, 20, max_polylines))
        points.append(generate_intention_points(s, target, k, 40.0).points)
    return collate(inputs, points, dtype)


def rigid(s, angle, shift):
    """The same scenario rotated by ``angle`` about the origin and translated by ``shift``."""
    c, sn = math.cos(angle), math.sin(angle)
    # exact quarter turns
    c, sn = (round(v) if abs(v - round(v)) < 1e-12 else v for v in (c, sn))

    def move(x, y):
        return c * x - sn * y + shift[0], sn * x + c * y + shift[1]

    data = scenario_to_dict(s)
    for poly in data["polylines"]:
        poly["points"] = [list(move(x, y)) for x, y in poly["points"]]
    for track in data["tracks"]:
        states = []
        for x, y, h, vx, vy, valid in track["states"]:
            if valid:
                x, y = move(x, y)
                h = normalize_angle(h + angle)
                vx, vy = c * vx - sn * vy, sn * vx + c * vy
            states.append([x, y, h, vx, vy, valid])
        track["states"] = states
    return scenario_from_dict(data)


def scene(lanes, agent_pose, future_len=1):
    """Scenario from ``lanes = {id: (points, children, neighbors)}`` with one target agent."""
    x, y, heading = agent_pose
    state = [x, y, heading, 0.0, 0.0, True]
    return scenario_from_dict({
        "id": "graph",
        "timestep": 0.1,
        "history_len": 0,
        "future_len": future_len,
        "lanes": [
            {"id": lid, "centerline": f"c_{lid}", "children": list(ch), "neighbors": list(nb)}
            for lid, (_, ch, nb) in lanes.items()
        ],
        "polylines": [
            {"id": f"c_{lid}", "kind": "lane_centerline", "points": [list(map(float, p)) for p in pts]}
            for lid, (pts, _, _) in lanes.items()
        ],
        "tracks": [{"id": "T", "kind": "vehicle", "length": 4.0, "width": 2.0,
                    "states": [state] * (1 + future_len)}],
        "targets": ["T"],
    })


def random_graph(rng):
    n = int(rng.integers(2, 25))
    ids = [f"L{i:02d}" for i in range(n)]
    lanes = {}
    for lid in ids:
        start = rng.uniform(-30, 30, 2)
        heading = rng.uniform(-math.pi, math.pi)
        steps = int(rng.integers(2, 25))
        turn = np.cumsum(rng.normal(0, 0.1, steps))
        pts = start + np.cumsum(
            np.stack([np.cos(heading + turn), np.sin(heading + turn)], 1) * 1.0, axis=0
        )
        pts = np.vstack([start, pts])
        children = [c for c in ids if c != lid and rng.uniform() < 2.0 / n]
        neighbors = [c for c in ids if c != lid and rng.uniform() < 1.5 / n]
        lanes[lid] = (pts, children, neighbors)
    # guarantee at least one cycle
    a, b = ids[0], ids[1]
    lanes[a][1].append(b) if b not in lanes[a][1] else None
    lanes[b][2].append(a) if a not in lanes[b][2] else None
    return lanes


def oracle_inputs(s):
    lanes = {lane.id: (lane.children, lane.neighbors) for lane in s.lanes}
    centerlines = {lane.id: [tuple(p) for p in s.centerline(lane.id).tolist()] for lane in s.lanes}
    return lanes, centerlines


def grid_world(side=16, length=20.0):
    lanes = {}
    for r in range(side):
        for c in range(side):
            lid = f"G{r:02d}{c:02d}"
            x0 = c * length
            pts = np.stack([np.arange(x0, x0 + length + 1e-9, 1.0), np.full(int(length) + 1, r * 4.0)], 1)
            children = [f"G{r:02d}{(c + 1) % side:02d}"]
            neighbors = [f"G{(r + 1) % side:02d}{c:02d}", f"G{(r - 1) % side:02d}{c:02d}"]
            lanes[lid] = (pts, children, neighbors)
    return lanes
