import math
import time

import numpy as np
import pytest

from guidedmotion.intentions import (
    IntentionPointGenerator,
    collect_candidates,
    generate_intention_points,
    grid_intention_points,
    nearest_lane,
    rank_sample,
)
from guidedmotion.geometry import from_frame, point_segment_distance
from guidedmotion.worlds import WorldSpec, generate
from fixtures import grid_world, oracle_inputs, random_graph, scene
from oracles import brute_intention_points, brute_nearest_lane


def test_matches_brute_force_on_random_graphs():
    rng = np.random.default_rng(2024)
    for trial in range(50):
        lanes = random_graph(rng)
        pose = (*rng.uniform(-25, 25, 2), rng.uniform(-math.pi, math.pi))
        s = scene(lanes, pose)
        st = s.tracks[0].states[0]
        k = int(rng.integers(1, 40))
        d_max = float(rng.uniform(3, 40))
        max_lanes = int(rng.integers(1, 30))
        got = generate_intention_points(s, "T", k, d_max, max_lanes)
        lane_in, centerlines = oracle_inputs(s)
        ref = brute_intention_points(lane_in, centerlines, (st.x, st.y), st.heading, k, d_max, max_lanes)
        assert list(got.source_lane_ids) == [lane for lane, _ in ref], trial
        expected = np.array([centerlines[lane][i] for lane, i in ref])
        assert np.array_equal(got.world_points, expected)
        np.testing.assert_allclose(from_frame(got.points, (st.x, st.y), st.heading), expected, atol=1e-9)
        assert len(got) == k


def test_nearest_lane_matches_exhaustive_scoring():
    s = generate(WorldSpec(template="fourway", lane_count=2, seed=4))
    lane_in, centerlines = oracle_inputs(s)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(-60, 60, 2)
        h = rng.uniform(-math.pi, math.pi)
        assert nearest_lane(s, p, h) == brute_nearest_lane(lane_in, centerlines, tuple(p), h)


def test_single_lane_and_heading_penalty():
    east = np.stack([np.arange(0, 20.0), np.full(20, 1.75)], 1)
    west = np.stack([np.arange(19.0, -1, -1), np.full(20, -1.75)], 1)
    s = scene({"E": (east, [], []), "W": (west, [], [])}, (5.0, 0.0, 0.0))
    assert nearest_lane(s, (5.0, 0.0), 0.0) == "E"
    assert nearest_lane(s, (5.0, 0.0), math.pi) == "W"
    s1 = scene({"E": (east, [], [])}, (5.0, 1.75, 0.0))
    assert nearest_lane(s1, (5.0, 1.75), 0.0) == "E"


def test_chain_example():
    def lane(x0):
        return np.stack([np.arange(x0, x0 + 3.0), np.zeros(3)], 1)

    # A covers x 0..2, B 3..5, C 6..8; the agent sits at the start of A
    s = scene({"A": (lane(0.0), ["B"], []), "B": (lane(3.0), ["C"], []), "C": (lane(6.0), [], [])},
              (0.0, 0.0, 0.0))
    got = generate_intention_points(s, "T", k=3, d_max=2.5, max_lanes=256)
    queue = collect_candidates(s, (0.0, 0.0), 0.0, 2.5, 256)
    assert all(d <= 2.5 for d, _, _ in queue)
    assert [d for d, _, _ in queue] == [0.0, 1.0, 2.0]
    ranks = [queue[0], queue[len(queue) // 2], queue[-1]]
    assert got.world_points.tolist() == [s.centerline(l)[i].tolist() for _, l, i in ranks]


def test_isolated_lane_falls_back_to_forward_waypoints():
    pts = np.stack([np.arange(0, 10.0), np.zeros(10)], 1)
    s = scene({"A": (pts, [], [])}, (3.2, 0.0, 0.0))
    got = generate_intention_points(s, "T", k=6, d_max=0.5)
    assert set(got.source_lane_ids) == {"A"}
    assert np.all(got.world_points[:, 0] >= 4.0)
    assert len(got) == 6


def test_cycle_terminates_and_inserts_each_lane_once():
    a = np.stack([np.arange(0, 10.0), np.zeros(10)], 1)
    b = np.stack([np.arange(0, 10.0), np.full(10, 3.5)], 1)
    s = scene({"A": (a, ["B"], ["B"]), "B": (b, ["A"], ["A"])}, (0.0, 0.0, 0.0))
    queue = collect_candidates(s, (0.0, 0.0), 0.0, 100.0, 256)
    assert sum(1 for _, lane, _ in queue if lane == "B") == 10
    assert sum(1 for _, lane, _ in queue if lane == "A") == 10
    assert len(set(queue)) == len(queue)


def test_fewer_candidates_than_k_cycles_in_rank_order():
    assert rank_sample(3, 7).tolist() == [0, 1, 2, 0, 1, 2, 0]
    assert rank_sample(5, 1).tolist() == [0]
    assert rank_sample(5, 3).tolist() == [0, 2, 4]


def test_runtime_at_256_lanes():
    s = scene(grid_world(), (150.0, 30.0, 0.0))
    assert len(s.lanes) == 256
    generate_intention_points(s, "T", 64, 85.0, 256)
    times = []
    for _ in range(10):
        t0 = time.perf_counter()
        generate_intention_points(s, "T", 64, 85.0, 256)
        times.append(time.perf_counter() - t0)
    assert min(times) < 0.010


def test_points_lie_on_centerlines_and_deterministic():
    for seed in range(5):
        s = generate(WorldSpec(template="t_junction", seed=seed, lane_count=2))
        a = generate_intention_points(s, s.targets[0], 64, 85.0, 256)
        b = generate_intention_points(s, s.targets[0], 64, 85.0, 256)
        assert np.array_equal(a.points, b.points)
        for p, lid in zip(a.world_points, a.source_lane_ids):
            pts = s.centerline(lid)
            assert point_segment_distance(p, pts[:-1], pts[1:]).min() < 1e-9


def test_argument_checks():
    s = generate(WorldSpec(seed=0))
    with pytest.raises(ValueError):
        generate_intention_points(s, "A0", k=0)
    with pytest.raises(ValueError):
        generate_intention_points(s, "A0", d_max=0)


def test_grid_points_and_estimator():
    g = grid_intention_points(16, 40.0)
    assert g.shape == (16, 2)
    assert g.min() == -40.0 and g.max() == 40.0
    data = [generate(WorldSpec(seed=i)) for i in range(2)]
    scene_sets = IntentionPointGenerator(k=8, d_max=40).fit_transform(data)
    grid_sets = IntentionPointGenerator(k=8, mode="grid").fit_transform(data)
    assert len(scene_sets) == 2 and all(len(p) == 8 for p in scene_sets)
    assert np.array_equal(grid_sets[0].points, grid_intention_points(8, 40.0))
    with pytest.raises(ValueError):
        IntentionPointGenerator(mode="kmeans").fit()
