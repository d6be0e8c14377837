"""Agent-centric tensors for one target agent.

Everything is expressed in the frame of the target's current pose, so the
result is invariant to any rigid motion of the whole scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import from_frame, point_at_arclength, resample, rotate_vectors, to_frame
from .scenario import AgentState, Scenario, current_state, normalize_angle
from .validation import check_scenarios

AGENT_FEATURES = 8  # x, y, cos, sin, vx, vy, is_vehicle, is_target
MAP_FEATURES = 7  # x, y, dir_x, dir_y, is_centerline, is_boundary, arc fraction
RELATIVE_FEATURES = 4  # dx, dy, cos(dtheta), sin(dtheta)
FUTURE_FEATURES = 4  # x, y, vx, vy


class DegenerateInputError(ValueError):
    pass


@dataclass
class ModelInputs:
    """Per-target network inputs plus the supervision and frame needed around them.

    Shapes use ``A`` agents, ``L`` polylines, ``P`` points per polyline, ``H``
    observed steps (history plus current) and ``F`` future steps. The target
    agent is always row 0.
    """

    agents: np.ndarray  # [A, H, 8]
    agent_mask: np.ndarray  # [A, H]
    map: np.ndarray  # [L, P, 7]
    map_mask: np.ndarray  # [L]
    relative: np.ndarray  # [L, H, 4]
    agent_positions: np.ndarray  # [A, 2]
    polyline_centers: np.ndarray  # [L, 2]
    future: np.ndarray  # [A, F, 4]
    future_mask: np.ndarray  # [A, F]
    origin: tuple[float, float, float]  # world pose of the frame
    target_speed: float
    scenario_id: str = ""
    agent_ids: tuple[str, ...] = ()
    polyline_ids: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    @property
    def target_id(self) -> str:
        return self.agent_ids[0]

    def to_world(self, points) -> np.ndarray:
        x, y, heading = self.origin
        return from_frame(points, (x, y), heading)

    def as_dict(self) -> dict:
        """JSON-friendly view (arrays become nested lists)."""
        out = {}
        for name in (
            "agents", "agent_mask", "map", "map_mask", "relative",
            "agent_positions", "polyline_centers", "future", "future_mask",
        ):
            out[name] = np.asarray(getattr(self, name)).tolist()
        out.update(
            origin=list(self.origin),
            target_speed=self.target_speed,
            scenario_id=self.scenario_id,
            agent_ids=list(self.agent_ids),
            polyline_ids=list(self.polyline_ids),
        )
        return out


def to_agent_frame(pose, target: AgentState) -> tuple[float, float, float]:
    """Map a world pose ``(x, y, heading)`` into the frame of ``target``."""
    if not target.valid:
        raise ValueError("target state is not valid")
    x, y, heading = pose
    local = to_frame((x, y), (target.x, target.y), target.heading)
    return float(local[0]), float(local[1]), normalize_angle(heading - target.heading)


def from_agent_frame(pose, target: AgentState) -> tuple[float, float, float]:
    x, y, heading = pose
    world = from_frame((x, y), (target.x, target.y), target.heading)
    return float(world[0]), float(world[1]), normalize_angle(heading + target.heading)


def split_polyline(points: np.ndarray, n_points: int) -> list[np.ndarray]:
    """Cut into pieces of at most ``n_points`` points sharing endpoints, each resampled
    to exactly ``n_points`` points uniformly in arc length."""
    step = n_points - 1
    pieces = []
    start = 0
    while start < len(points) - 1:
        stop = min(start + step, len(points) - 1)
        pieces.append(resample(points[start : stop + 1], n_points))
        start = stop
    return pieces


def _polyline_features(piece: np.ndarray, kind_flags) -> np.ndarray:
    direction = np.diff(piece, axis=0)
    direction = np.vstack([direction, direction[-1:]])
    norm = np.hypot(direction[:, 0], direction[:, 1])[:, None]
    direction = direction / np.maximum(norm, 1e-12)
    n = len(piece)
    frac = np.arange(n) / max(n - 1, 1)
    flags = np.broadcast_to(np.asarray(kind_flags, dtype=float), (n, 2))
    return np.concatenate([piece, direction, flags, frac[:, None]], axis=1)


def build_inputs(
    s: Scenario,
    target_id: str,
    map_points_per_polyline: int = 20,
    max_polylines: int = 128,
    max_agents: int | None = None,
) -> ModelInputs:
    """Vectorize ``s`` around ``target_id``; see :class:`ModelInputs` for the layout."""
    target = current_state(s, target_id)
    if not target.valid:
        raise DegenerateInputError(f"target {target_id!r} is not valid at the current step")
    if not s.polylines:
        raise DegenerateInputError(f"scenario {s.id!r} has no map polylines")

    origin = np.array([target.x, target.y])
    heading0 = target.heading
    H = s.history_len + 1
    P = map_points_per_polyline

    # agents, target first
    order = [s.track(target_id)] + [t for t in s.tracks if t.id != target_id]
    if max_agents is not None:
        order = order[:max_agents]
    A = len(order)
    agents = np.zeros((A, H, AGENT_FEATURES))
    agent_mask = np.zeros((A, H), dtype=bool)
    positions = np.zeros((A, 2))
    future = np.zeros((A, s.future_len, FUTURE_FEATURES))
    future_mask = np.zeros((A, s.future_len), dtype=bool)
    for i, track in enumerate(order):
        arr = track.array
        valid = arr[:, 5] > 0.5
        xy = to_frame(arr[:, :2], origin, heading0)
        vel = rotate_vectors(arr[:, 3:5], heading0)
        rel_heading = arr[:, 2] - heading0
        hist = slice(0, H)
        m = valid[hist]
        feats = np.concatenate(
            [
                xy[hist],
                np.cos(rel_heading[hist])[:, None],
                np.sin(rel_heading[hist])[:, None],
                vel[hist],
                np.full((H, 1), float(track.kind == "vehicle")),
                np.full((H, 1), float(i == 0)),
            ],
            axis=1,
        )
        agents[i] = np.where(m[:, None], feats, 0.0)
        agent_mask[i] = m
        if m.any():
            positions[i] = xy[hist][np.flatnonzero(m)[-1]]
        fm = valid[H:]
        future[i] = np.where(fm[:, None], np.concatenate([xy[H:], vel[H:]], axis=1), 0.0)
        future_mask[i] = fm

    # map polylines, nearest first
    boundary = {"road_edge_boundary", "road_edge_median", "solid_double_yellow", "solid_double_white"}
    pieces, ids, centers_w, center_heads = [], [], [], []
    for poly in s.polylines:
        flags = (float(poly.kind == "lane_centerline"), float(poly.kind in boundary))
        for j, piece in enumerate(split_polyline(poly.xy, P)):
            length = float(np.sum(np.hypot(*np.diff(piece, axis=0).T)))
            c, h = point_at_arclength(piece, 0.5 * length)
            pieces.append((piece, flags))
            ids.append(f"{poly.id}#{j}")
            centers_w.append(c)
            center_heads.append(h)
    centers_w = np.array(centers_w)
    center_heads = np.array(center_heads)
    dist = np.hypot(*(centers_w - origin).T)
    keep = np.argsort(dist, kind="stable")[:max_polylines]

    L = len(keep)
    map_feats = np.zeros((L, P, MAP_FEATURES))
    for row, idx in enumerate(keep):
        piece, flags = pieces[idx]
        local = to_frame(piece, origin, heading0)
        map_feats[row] = _polyline_features(local, flags)
    centers = to_frame(centers_w[keep], origin, heading0)

    # relative motion between the target and every polyline center, per observed step
    tarr = s.track(target_id).array[:H]
    tvalid = tarr[:, 5] > 0.5
    delta = centers_w[keep][:, None, :] - tarr[None, :, :2]  # [L, H, 2]
    c, sn = np.cos(tarr[:, 2]), np.sin(tarr[:, 2])
    dx = c[None] * delta[..., 0] + sn[None] * delta[..., 1]
    dy = -sn[None] * delta[..., 0] + c[None] * delta[..., 1]
    dtheta = center_heads[keep][:, None] - tarr[None, :, 2]
    relative = np.stack([dx, dy, np.cos(dtheta), np.sin(dtheta)], axis=-1)
    relative = np.where(tvalid[None, :, None], relative, 0.0)

    return ModelInputs(
        agents=agents,
        agent_mask=agent_mask,
        map=map_feats,
        map_mask=np.ones(L, dtype=bool),
        relative=relative,
        agent_positions=positions,
        polyline_centers=centers,
        future=future,
        future_mask=future_mask,
        origin=(float(target.x), float(target.y), float(heading0)),
        target_speed=float(math.hypot(target.vx, target.vy)),
        scenario_id=s.id,
        agent_ids=tuple(t.id for t in order),
        polyline_ids=tuple(ids[i] for i in keep),
    )


def perturb_inputs(
    inputs: ModelInputs, rng: np.random.Generator, position_noise: float = 0.0,
    drop_polylines: float = 0.0,
) -> ModelInputs:
    """Gaussian noise on observed agent positions and random polyline masking."""
    agents = inputs.agents.copy()
    if position_noise > 0:
        noise = rng.normal(scale=position_noise, size=agents[..., :2].shape)
        agents[..., :2] += np.where(inputs.agent_mask[..., None], noise, 0.0)
    map_mask = inputs.map_mask.copy()
    if drop_polylines > 0:
        map_mask &= rng.uniform(size=map_mask.shape) >= drop_polylines
    out = ModelInputs(**{**inputs.__dict__, "agents": agents, "map_mask": map_mask})
    out.map = np.where(map_mask[:, None, None], out.map, 0.0)
    return out


class ScenarioVectorizer(TransformerMixin, BaseEstimator):
    """Turn scenarios into one :class:`ModelInputs` per target agent."""

    def __init__(self, map_points_per_polyline=20, max_polylines=128, max_agents=None):
        self.map_points_per_polyline = map_points_per_polyline
        self.max_polylines = max_polylines
        self.max_agents = max_agents

    def fit(self, X=None, y=None):
        if self.map_points_per_polyline < 2:
            raise ValueError("map_points_per_polyline must be >= 2")
        if self.max_polylines < 1:
            raise ValueError("max_polylines must be >= 1")
        return self

    def transform(self, X) -> list[ModelInputs]:
        return [
            build_inputs(s, a, self.map_points_per_polyline, self.max_polylines, self.max_agents)
            for s in check_scenarios(X)
            for a in s.targets
        ]
