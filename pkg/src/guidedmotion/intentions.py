"""Lane-graph queries and scene-compliant intention points.

Intention points are gathered by a breadth-first search over legal lane
transitions (successors and adjacent lanes) from the lane the agent occupies,
then sampled at uniform rank intervals of their distance from the agent.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import from_frame, point_segment_distance, to_frame
from .scenario import Scenario, current_state
from .validation import check_scenarios

DEFAULT_K = 64
DEFAULT_D_MAX = 85.0
DEFAULT_MAX_LANES = 256
HEADING_WEIGHT = 2.0


class DegenerateSceneError(ValueError):
    pass


@dataclass(frozen=True)
class IntentionPointSet:
    agent_id: str
    points: np.ndarray  # [k, 2], agent frame
    source_lane_ids: tuple[str, ...]
    world_points: np.ndarray  # [k, 2]

    def __len__(self) -> int:
        return len(self.points)


def _lane_table(s: Scenario):
    """Concatenated centerline segments and waypoints with owning lane index, cached on the scenario."""
    cached = s.__dict__.get("_lane_table")
    if cached is None:
        starts, ends, owner, points, point_owner, point_index = [], [], [], [], [], []
        for i, lane in enumerate(s.lanes):
            pts = s.centerline(lane.id)
            starts.append(pts[:-1])
            ends.append(pts[1:])
            owner.append(np.full(len(pts) - 1, i))
            points.append(pts)
            point_owner.append(np.full(len(pts), i))
            point_index.append(np.arange(len(pts)))
        ids = [lane.id for lane in s.lanes]
        id_rank = np.empty(len(ids), dtype=int)
        id_rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(len(ids))
        cached = {
            "starts": np.concatenate(starts),
            "ends": np.concatenate(ends),
            "owner": np.concatenate(owner),
            "points": np.concatenate(points),
            "point_owner": np.concatenate(point_owner),
            "point_index": np.concatenate(point_index),
            "index": {lid: i for i, lid in enumerate(ids)},
            "id_rank": id_rank,
        }
        s.__dict__["_lane_table"] = cached
    return cached


def lane_scores(s: Scenario, position, heading: float) -> np.ndarray:
    """Per-lane score: perpendicular distance plus the heading-mismatch penalty."""
    table = _lane_table(s)
    starts, ends, owner = table["starts"], table["ends"], table["owner"]
    p = np.asarray(position, dtype=float)
    dist = point_segment_distance(p, starts, ends)
    # closest segment of each lane, first one on ties
    order = np.lexsort((np.arange(len(dist)), dist, owner))
    _, first_pos = np.unique(owner[order], return_index=True)
    first = order[first_pos]
    seg = ends[first] - starts[first]
    direction = np.arctan2(seg[:, 1], seg[:, 0])
    return dist[first] + HEADING_WEIGHT * (1.0 - np.cos(heading - direction))


def nearest_lane(s: Scenario, position, heading: float) -> str:
    """Lane minimizing distance plus heading penalty; ties go to the smaller lane id."""
    if not s.lanes:
        raise DegenerateSceneError(f"scenario {s.id!r} has no lanes")
    scores = lane_scores(s, position, heading)
    best = scores.min()
    return min(lane.id for lane, sc in zip(s.lanes, scores) if sc == best)


def _forward_index(pts: np.ndarray, position) -> int:
    """Index of the first waypoint ahead of the projection of ``position``."""
    p = np.asarray(position, dtype=float)
    d = point_segment_distance(p, pts[:-1], pts[1:])
    i = int(np.argmin(d))
    a, b = pts[i], pts[i + 1]
    ab = b - a
    t = float(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300))
    return i if t <= 0.0 else i + 1


def rank_sample(n: int, k: int) -> np.ndarray:
    """``k`` indices at uniform rank intervals over ``n`` sorted candidates.

    With fewer candidates than ``k`` the candidates are cycled in rank order.
    """
    if n <= 0:
        raise ValueError("no candidates to sample from")
    if n < k:
        return np.arange(k) % n
    if k == 1:
        return np.zeros(1, dtype=int)
    return np.floor(np.arange(k) * (n - 1) / (k - 1) + 0.5).astype(int)


def _candidate_arrays(s: Scenario, position, heading: float, d_max: float, max_lanes: int):
    """Sorted candidate arrays ``(distance, lane_index, waypoint_index)``."""
    table = _lane_table(s)
    index = table["index"]
    start = index[nearest_lane(s, position, heading)]
    p = np.asarray(position, dtype=float)
    pts, owner = table["points"], table["point_owner"]
    dist = np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1])
    lane_min = np.full(len(s.lanes), np.inf)
    np.minimum.at(lane_min, owner, dist)

    start_pts = s.centerline(s.lanes[start].id)
    ahead = _forward_index(start_pts, p)
    on_start = owner == start
    keep = on_start & (table["point_index"] >= ahead) & (dist <= d_max)

    visited = {start}
    frontier = deque([start])
    while frontier and len(visited) <= max_lanes:
        lane = s.lanes[frontier.popleft()]
        for nxt_id in dict.fromkeys((*lane.children, *lane.neighbors)):
            nxt = index[nxt_id]
            if nxt in visited or len(visited) >= max_lanes:
                continue
            if lane_min[nxt] > d_max:
                continue
            visited.add(nxt)
            frontier.append(nxt)
    others = np.zeros(len(s.lanes), dtype=bool)
    others[list(visited - {start})] = True
    keep |= others[owner] & (dist <= d_max)

    if not keep.any():
        # fall back to the start lane's forward waypoints regardless of range
        keep = on_start & (table["point_index"] >= ahead)
    sel = np.flatnonzero(keep)
    d, lanes, wps = dist[sel], owner[sel], table["point_index"][sel]
    order = np.lexsort((wps, table["id_rank"][lanes], d))
    return d[order], lanes[order], wps[order]


def collect_candidates(
    s: Scenario, position, heading: float, d_max: float, max_lanes: int
) -> list[tuple[float, str, int]]:
    """Distance-sorted ``(distance, lane_id, waypoint_index)`` candidates."""
    d, lanes, wps = _candidate_arrays(s, position, heading, d_max, max_lanes)
    ids = [lane.id for lane in s.lanes]
    return [(float(a), ids[b], int(c)) for a, b, c in zip(d, lanes, wps)]


def generate_intention_points(
    s: Scenario,
    agent_id: str,
    k: int = DEFAULT_K,
    d_max: float = DEFAULT_D_MAX,
    max_lanes: int = DEFAULT_MAX_LANES,
) -> IntentionPointSet:
    """Sample ``k`` lane-graph waypoints reachable from the agent's lane.

    Parameters
    ----------
    s : Scenario
    agent_id : str
        Agent whose current state anchors the search; must be valid now.
    k : int
        Number of points returned, always exactly ``k``.
    d_max : float
        Lanes and waypoints farther than this from the agent are skipped.
    max_lanes : int
        Cap on the number of lanes the search may visit.

    Returns
    -------
    IntentionPointSet
        Points in the agent frame, plus their world coordinates and lanes.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not d_max > 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    state = current_state(s, agent_id)
    if not state.valid:
        raise ValueError(f"agent {agent_id!r} is not valid at the current step")
    origin = (state.x, state.y)
    d, lanes, wps = _candidate_arrays(s, origin, state.heading, d_max, max_lanes)
    if not len(d):
        raise DegenerateSceneError(f"no intention-point candidates for agent {agent_id!r}")
    picks = rank_sample(len(d), k)
    world = np.array([s.centerline(s.lanes[lanes[i]].id)[wps[i]] for i in picks])
    return IntentionPointSet(
        agent_id=agent_id,
        points=to_frame(world, origin, state.heading),
        source_lane_ids=tuple(s.lanes[lanes[i]].id for i in picks),
        world_points=world,
    )


def grid_intention_points(k: int, extent: float = 40.0) -> np.ndarray:
    """Fixed map-agnostic pattern: a near-square grid over ``[-extent, extent]^2``."""
    rows = max(int(math.floor(math.sqrt(k))), 1)
    cols = int(math.ceil(k / rows))
    xs = np.linspace(-extent, extent, cols) if cols > 1 else np.zeros(1)
    ys = np.linspace(-extent, extent, rows) if rows > 1 else np.zeros(1)
    grid = np.array([(x, y) for y in ys for x in xs])
    return grid[:k]


class IntentionPointGenerator(TransformerMixin, BaseEstimator):
    """Per-target intention points for a batch of scenarios.

    ``mode="scene"`` runs the lane-graph search; ``mode="grid"`` returns the
    same fixed grid for every target (the map-agnostic baseline).
    """

    def __init__(self, k=DEFAULT_K, d_max=DEFAULT_D_MAX, max_lanes=DEFAULT_MAX_LANES,
                 mode="scene", grid_extent=40.0):
        self.k = k
        self.d_max = d_max
        self.max_lanes = max_lanes
        self.mode = mode
        self.grid_extent = grid_extent

    def fit(self, X=None, y=None):
        if self.mode not in ("scene", "grid"):
            raise ValueError(f"mode must be 'scene' or 'grid', got {self.mode!r}")
        self.n_features_out_ = 2 * self.k
        return self

    def _one(self, s: Scenario, agent_id: str) -> IntentionPointSet:
        if self.mode == "grid":
            pts = grid_intention_points(self.k, self.grid_extent)
            st = current_state(s, agent_id)
            return IntentionPointSet(
                agent_id, pts, ("",) * self.k, from_frame(pts, (st.x, st.y), st.heading)
            )
        return generate_intention_points(s, agent_id, self.k, self.d_max, self.max_lanes)

    def transform(self, X) -> list[IntentionPointSet]:
        scenarios = check_scenarios(X)
        return [self._one(s, a) for s in scenarios for a in s.targets]
