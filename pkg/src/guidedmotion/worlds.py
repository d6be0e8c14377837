"""Procedural road scenes with lane graphs, boundaries and scripted vehicles.

Roads are right-hand traffic with ``lane_count`` lanes per direction. Vehicle
motion is produced by a pure-pursuit controller whose commands are then rolled
forward with :func:`guidedmotion.kinematics.integrate_states`, so every recorded
track is exactly reproducible from its controls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import arc_lengths, nearest_on_polyline, resample
from .kinematics import KinematicLimits, integrate_states
from .scenario import (
    AgentState,
    AgentTrack,
    Lane,
    MapPolyline,
    Scenario,
    Waypoint,
    normalize_angle,
    quantize,
)

TEMPLATES = ("straight", "curve", "t_junction", "fourway")

_ARM_DIRS = {"E": (1.0, 0.0), "N": (0.0, 1.0), "W": (-1.0, 0.0), "S": (0.0, -1.0)}
_TEMPLATE_ARMS = {"t_junction": ("E", "W", "S"), "fourway": ("E", "N", "W", "S")}
_REF_STEP = 0.25
_SEGMENT_LENGTH = 25.0
_JUNCTION_MARGIN = 6.0
_CURVE_RADIUS = 30.0


@dataclass(frozen=True)
class WorldSpec:
    template: str = "fourway"
    lane_count: int = 1
    lane_width: float = 3.5
    waypoint_spacing: float = 1.0
    agent_count: int = 3
    seed: int = 0
    target_count: int = 1
    history_len: int = 10
    future_len: int = 30
    timestep: float = 0.1
    arm_length: float = 50.0
    speed_range: tuple[float, float] = (4.0, 9.0)
    limits: KinematicLimits = field(default_factory=KinematicLimits)

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}; expected one of {TEMPLATES}")
        if self.lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if not self.waypoint_spacing > 0:
            raise ValueError("waypoint_spacing must be positive")
        if self.agent_count < 1:
            raise ValueError("agent_count must be >= 1")
        if not 1 <= self.target_count <= self.agent_count:
            raise ValueError("target_count must be in [1, agent_count]")
        if not self.lane_width > 0 or not self.timestep > 0:
            raise ValueError("lane_width and timestep must be positive")
        if abs(self.timestep - self.limits.dt) > 1e-12:
            object.__setattr__(
                self,
                "limits",
                KinematicLimits(
                    self.limits.a_min,
                    self.limits.a_max,
                    self.limits.yaw_min,
                    self.limits.yaw_max,
                    self.timestep,
                ),
            )


# --------------------------------------------------------------------------
# reference curves


def _straight(start, direction, length):
    n = int(round(length / _REF_STEP)) + 1
    s = np.linspace(0.0, length, n)
    d = np.asarray(direction, dtype=float)
    pts = np.asarray(start, dtype=float) + s[:, None] * d
    return pts, np.tile(d, (n, 1))


def _arc(center, radius, phi0, sweep):
    n = max(int(round(abs(sweep) * radius / _REF_STEP)), 2) + 1
    phi = phi0 + np.linspace(0.0, sweep, n)
    pts = np.asarray(center) + radius * np.stack([np.cos(phi), np.sin(phi)], -1)
    sign = 1.0 if sweep > 0 else -1.0
    tang = sign * np.stack([-np.sin(phi), np.cos(phi)], -1)
    return pts, tang


def _join(*pieces):
    pts = [pieces[0][0]]
    tans = [pieces[0][1]]
    for p, t in pieces[1:]:
        pts.append(p[1:])
        tans.append(t[1:])
    return np.concatenate(pts), np.concatenate(tans)


def _offset(ref, offset):
    pts, tan = ref
    left = np.stack([-tan[:, 1], tan[:, 0]], -1)
    return pts + offset * left


def _spaced(points, spacing):
    length = arc_lengths(points)[-1]
    n = max(int(math.ceil(length / spacing - 1e-9)), 1) + 1
    return resample(points, n)


def _bezier(p0, h0, p3, h3, spacing):
    chord = float(np.hypot(*(p3 - p0)))
    turn = abs(normalize_angle(math.atan2(h3[1], h3[0]) - math.atan2(h0[1], h0[0])))
    c = chord / 3.0 if turn < 1e-6 else 0.3905 * chord
    p1, p2 = p0 + c * h0, p3 - c * h3
    t = np.linspace(0.0, 1.0, 400)[:, None]
    dense = (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3
    return _spaced(dense, spacing)


def _split(points, seg_len, spacing):
    """Split a dense lane into chunks of roughly ``seg_len`` meters sharing endpoints."""
    per = max(int(round(seg_len / spacing)), 1)
    idx = list(range(0, len(points) - 1, per)) + [len(points) - 1]
    if len(idx) > 2 and idx[-1] - idx[-2] < per // 2:
        idx.pop(-2)
    return [points[a : b + 1] for a, b in zip(idx[:-1], idx[1:])]


# --------------------------------------------------------------------------
# map construction


class _MapBuilder:
    def __init__(self, spec: WorldSpec):
        self.spec = spec
        self.polylines: list[MapPolyline] = []
        self.children: dict[str, list[str]] = {}
        self.neighbors: dict[str, list[str]] = {}
        self.order: list[str] = []

    def polyline(self, pid, kind, pts):
        pts = np.asarray(pts, dtype=float)
        coords = [Waypoint(quantize(x), quantize(y)) for x, y in pts]
        dedup = [coords[0]] + [c for prev, c in zip(coords, coords[1:]) if c != prev]
        self.polylines.append(MapPolyline(pid, kind, tuple(dedup)))

    def lane(self, lane_id, pts):
        self.polyline(f"{lane_id}_c", "lane_centerline", pts)
        self.children.setdefault(lane_id, [])
        self.neighbors.setdefault(lane_id, [])
        self.order.append(lane_id)

    def chain(self, prefix, pts):
        """Add a lane split into segments chained by ``children``; returns segment ids."""
        ids = []
        for k, seg in enumerate(_split(pts, _SEGMENT_LENGTH, self.spec.waypoint_spacing)):
            lid = f"{prefix}_{k}"
            self.lane(lid, seg)
            if ids:
                self.children[ids[-1]].append(lid)
            ids.append(lid)
        return ids

    def link_neighbors(self, groups):
        """``groups[i][k]`` is segment k of the i-th same-direction lane."""
        for i in range(len(groups) - 1):
            for a, b in zip(groups[i], groups[i + 1]):
                self.neighbors[a].append(b)
                self.neighbors[b].append(a)

    def road(self, name, ref, lanes_fwd=True, lanes_bwd=True):
        """Lanes, separators, edges and median along a reference; returns lane groups."""
        n, w, sp = self.spec.lane_count, self.spec.lane_width, self.spec.waypoint_spacing
        fwd, bwd = [], []
        for i in range(n):
            if lanes_fwd:
                fwd.append(self.chain(f"{name}f{i}", _spaced(_offset(ref, -(i + 0.5) * w), sp)))
            if lanes_bwd:
                pts = _spaced(_offset(ref, (i + 0.5) * w), sp)[::-1]
                bwd.append(self.chain(f"{name}b{i}", pts))
        self.link_neighbors(fwd)
        self.link_neighbors(bwd)
        for i in range(1, n):
            self.polyline(f"{name}_sep_r{i}", "dashed_line", _spaced(_offset(ref, -i * w), sp))
            self.polyline(f"{name}_sep_l{i}", "dashed_line", _spaced(_offset(ref, i * w), sp))
        self.polyline(f"{name}_median", "solid_double_yellow", _spaced(_offset(ref, 0.0), sp))
        return fwd, bwd

    def build(self):
        lanes = tuple(
            Lane(lid, f"{lid}_c", tuple(self.children[lid]), tuple(self.neighbors[lid]))
            for lid in self.order
        )
        return lanes, tuple(self.polylines)


def _linear_map(spec: WorldSpec, builder: _MapBuilder):
    L, sp = spec.arm_length, spec.waypoint_spacing
    edge = spec.lane_count * spec.lane_width
    if spec.template == "straight":
        ref = _straight((-L, 0.0), (1.0, 0.0), 2 * L)
    else:
        r = _CURVE_RADIUS
        ref = _join(
            _straight((-L, 0.0), (1.0, 0.0), L),
            _arc((0.0, r), r, -math.pi / 2, math.pi / 2),
            _straight((r, r), (0.0, 1.0), L),
        )
    fwd, bwd = builder.road("R", ref)
    builder.polyline("R_edge_r", "road_edge_boundary", _spaced(_offset(ref, -edge), sp))
    builder.polyline("R_edge_l", "road_edge_boundary", _spaced(_offset(ref, edge), sp))
    # forward lanes enter from the start of the reference, backward ones from its end
    return [g[0] for g in fwd] + [g[0] for g in bwd]


def _junction_map(spec: WorldSpec, builder: _MapBuilder):
    n, w, sp, L = spec.lane_count, spec.lane_width, spec.waypoint_spacing, spec.arm_length
    h = n * w + _JUNCTION_MARGIN
    arms = _TEMPLATE_ARMS[spec.template]
    inbound, outbound = {}, {}
    for arm in arms:
        u = np.array(_ARM_DIRS[arm])
        fwd, bwd = builder.road(arm, _straight(h * u, u, L))
        outbound[arm], inbound[arm] = fwd, bwd

    # connectors
    for a in arms:
        ua = np.array(_ARM_DIRS[a])
        na = np.array([-ua[1], ua[0]])
        heading = -ua
        left_of = np.array([-heading[1], heading[0]])
        for b in arms:
            if b == a:
                continue
            ub = np.array(_ARM_DIRS[b])
            nb = np.array([-ub[1], ub[0]])
            if np.allclose(ub, -ua):
                pairs = [(i, i) for i in range(n)]
            elif np.allclose(ub, left_of):
                pairs = [(0, 0)]
            else:
                pairs = [(n - 1, n - 1)]
            for i, j in pairs:
                p0 = h * ua + (i + 0.5) * w * na
                p3 = h * ub - (j + 0.5) * w * nb
                lid = f"X{a}{i}{b}{j}"
                builder.lane(lid, _bezier(p0, heading, p3, ub, sp))
                builder.children[inbound[a][i][-1]].append(lid)
                builder.children[lid].append(outbound[b][j][0])

    # edges: rounded corner between perpendicular arms, straight edge across a missing arm
    order = sorted(arms, key=lambda k: math.atan2(_ARM_DIRS[k][1], _ARM_DIRS[k][0]) % (2 * math.pi))
    edge = n * w
    for k, a in enumerate(order):
        b = order[(k + 1) % len(order)]
        ua, ub = np.array(_ARM_DIRS[a]), np.array(_ARM_DIRS[b])
        na = np.array([-ua[1], ua[0]])
        if np.allclose(ub, -ua):
            pts = _straight((h + L) * ua + edge * na, -ua, 2 * (h + L))[0]
        else:
            r = h - edge
            corner = h * (ua + ub)
            alpha = np.linspace(0.0, math.pi / 2, max(int(r * math.pi / 2 / _REF_STEP), 2) + 1)
            fillet = corner - r * (np.cos(alpha)[:, None] * ub + np.sin(alpha)[:, None] * ua)
            pts = np.concatenate(
                [
                    _straight((h + L) * ua + edge * ub, -ua, L)[0][:-1],
                    fillet,
                    _straight(h * ub + edge * ua, ub, L)[0][1:],
                ]
            )
        builder.polyline(f"edge_{a}{b}", "road_edge_boundary", _spaced(pts, sp))
    return [inbound[a][i][0] for a in arms for i in range(n)]


def build_map(spec: WorldSpec):
    """Lane graph and polylines for ``spec``; also the lanes agents may spawn on."""
    builder = _MapBuilder(spec)
    if spec.template in ("straight", "curve"):
        entries = _linear_map(spec, builder)
    else:
        entries = _junction_map(spec, builder)
    lanes, polylines = builder.build()
    return lanes, polylines, entries


# --------------------------------------------------------------------------
# agents


def _route(rng, lane_by_id, centerlines, start, min_length):
    """Random walk over ``children`` from ``start``; returns the concatenated path."""
    path = [centerlines[start]]
    length = arc_lengths(path[0])[-1]
    current = start
    while length < min_length:
        kids = lane_by_id[current].children
        if not kids:
            break
        current = kids[int(rng.integers(len(kids)))]
        pts = centerlines[current]
        path.append(pts[1:] if np.allclose(pts[0], path[-1][-1]) else pts)
        length += arc_lengths(pts)[-1]
    return np.concatenate(path)


def _drive(rng, path, spec: WorldSpec, s_start, steps):
    """Pure-pursuit commands along ``path``; returns the initial state and controls."""
    lim = spec.limits
    cum = arc_lengths(path)
    i0 = int(np.clip(np.searchsorted(cum, s_start) - 1, 0, len(path) - 2))
    seg = path[i0 + 1] - path[i0]
    frac = (s_start - cum[i0]) / max(cum[i0 + 1] - cum[i0], 1e-9)
    x, y = (float(v) for v in path[i0] + frac * seg)
    heading = math.atan2(seg[1], seg[0])
    lo, hi = spec.speed_range
    speed = float(rng.uniform(lo, hi))
    cruise = float(rng.uniform(lo, hi))
    init = (x, y, heading, speed)
    a_cap = 0.3 * min(abs(lim.a_min), lim.a_max)
    w_cap = 0.9 * min(abs(lim.yaw_min), lim.yaw_max)

    accel = np.empty(steps)
    yaw = np.empty(steps)
    s_hint = s_start
    for t in range(steps):
        a = float(np.clip(0.8 * (cruise - speed), -a_cap, a_cap))
        lookahead = 2.5 + 0.25 * max(speed, 0.0)
        window = (cum >= s_hint - 5.0) & (cum <= s_hint + 15.0)
        idx = np.flatnonzero(window)
        if len(idx) < 2:
            idx = np.arange(len(path))
        _, j = nearest_on_polyline((x, y), path[idx])
        s_hint = cum[idx[j]]
        goal_s = min(s_hint + lookahead, cum[-1])
        g = int(np.clip(np.searchsorted(cum, goal_s), 0, len(path) - 1))
        dx, dy = path[g, 0] - x, path[g, 1] - y
        alpha = normalize_angle(math.atan2(dy, dx) - heading)
        dist = max(math.hypot(dx, dy), 1e-6)
        v_next = speed + a * lim.dt
        w = float(np.clip(2.0 * v_next * math.sin(alpha) / dist, -w_cap, w_cap))
        accel[t], yaw[t] = a, w
        speed = v_next
        heading += w * lim.dt
        x += speed * math.cos(heading) * lim.dt
        y += speed * math.sin(heading) * lim.dt
    return init, accel, yaw


def generate(spec: WorldSpec) -> Scenario:
    """Build a seeded scenario from ``spec``."""
    rng = np.random.default_rng(spec.seed)
    lanes, polylines, entries = build_map(spec)
    lane_by_id = {lane.id: lane for lane in lanes}
    poly_by_id = {p.id: p.xy for p in polylines}
    centerlines = {lane.id: poly_by_id[lane.centerline] for lane in lanes}

    hist, fut, dt = spec.history_len, spec.future_len, spec.timestep
    steps = hist + fut
    v_hi = spec.speed_range[1]
    horizon_dist = (v_hi + 3.0) * steps * dt + 20.0
    junction = spec.template in _TEMPLATE_ARMS

    order = rng.permutation(len(entries))
    tracks = []
    for k in range(spec.agent_count):
        start = entries[order[k % len(entries)]]
        path = _route(rng, lane_by_id, centerlines, start, 2 * spec.arm_length + horizon_dist)
        if junction:
            # the current step lands shortly before the junction box
            s_now = spec.arm_length - float(rng.uniform(1.0, 15.0))
        else:
            s_now = float(rng.uniform(15.0, spec.arm_length))
        s_now += 12.0 * (k // len(entries))
        s_start = max(s_now - spec.speed_range[1] * hist * dt, 0.0)
        init, accel, yaw = _drive(rng, path, spec, s_start, steps)
        x, y, th, v = integrate_states(
            accel, yaw, *(np.asarray(c, dtype=float) for c in init), spec.limits
        )
        xs = np.concatenate([[init[0]], x])
        ys = np.concatenate([[init[1]], y])
        ths = np.concatenate([[init[2]], th])
        vs = np.concatenate([[init[3]], v])
        first_valid = 0
        if k >= spec.target_count and rng.uniform() < 0.25:
            first_valid = int(rng.integers(1, max(hist, 2)))
        states = []
        for t in range(steps + 1):
            if t < first_valid:
                states.append(AgentState())
                continue
            head = normalize_angle(ths[t])
            states.append(
                AgentState(
                    quantize(xs[t]),
                    quantize(ys[t]),
                    quantize(head),
                    quantize(vs[t] * math.cos(ths[t])),
                    quantize(vs[t] * math.sin(ths[t])),
                    True,
                )
            )
        tracks.append(AgentTrack(f"A{k}", "vehicle", 4.5, 1.9, tuple(states)))

    return Scenario(
        id=f"{spec.template}-{spec.seed}",
        timestep=dt,
        history_len=hist,
        future_len=fut,
        lanes=lanes,
        polylines=polylines,
        tracks=tuple(tracks),
        targets=tuple(f"A{k}" for k in range(spec.target_count)),
    )


def generate_dataset(template: str, count: int, seed: int = 0, **kwargs) -> list[Scenario]:
    """``count`` scenarios seeded ``seed, seed + 1, ...``."""
    return [generate(WorldSpec(template=template, seed=seed + i, **kwargs)) for i in range(count)]
