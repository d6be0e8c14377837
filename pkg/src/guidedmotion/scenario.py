"""Scene, agent and map types plus the canonical JSON scenario format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import numpy as np

POLYLINE_KINDS = (
    "lane_centerline",
    "road_edge_boundary",
    "road_edge_median",
    "solid_double_yellow",
    "solid_double_white",
    "dashed_line",
    "crosswalk",
    "speed_bump",
    "stop_sign",
)
BOUNDARY_KINDS = frozenset(
    {"solid_double_yellow", "solid_double_white", "road_edge_boundary", "road_edge_median"}
)
AGENT_KINDS = ("vehicle", "pedestrian", "cyclist")

COORD_LIMIT = 1e5
# Headings are stored with 6 decimals, so a normalized pi can round to 3.141593.
_HEADING_SLACK = 1e-6


class ScenarioError(ValueError):
    """Base class for scenario loading and validation failures."""


class ScenarioParseError(ScenarioError):
    """The file is not valid UTF-8 JSON."""


class ScenarioSchemaError(ScenarioError):
    """A required field is missing or has the wrong type."""

    def __init__(self, field_path: str, message: str = "missing required field"):
        self.field = field_path
        super().__init__(f"{message}: {field_path}")


class ScenarioValidationError(ScenarioError):
    """The scenario is well-formed but violates a semantic invariant."""


def normalize_angle(theta):
    """Wrap angles into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


class Waypoint(NamedTuple):
    x: float
    y: float


class AgentState(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    valid: bool = False

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class MapPolyline:
    id: str
    kind: str
    points: tuple[Waypoint, ...]

    @cached_property
    def xy(self) -> np.ndarray:
        arr = np.array(self.points, dtype=float).reshape(-1, 2)
        arr.flags.writeable = False
        return arr

    @property
    def is_boundary(self) -> bool:
        return self.kind in BOUNDARY_KINDS


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: str
    children: tuple[str, ...] = ()
    neighbors: tuple[str, ...] = ()
    speed_limit: float | None = None


@dataclass(frozen=True)
class AgentTrack:
    id: str
    kind: str
    length: float
    width: float
    states: tuple[AgentState, ...]

    @cached_property
    def array(self) -> np.ndarray:
        """States as a ``[T, 6]`` float array ``(x, y, heading, vx, vy, valid)``."""
        arr = np.array(self.states, dtype=float).reshape(-1, 6)
        arr.flags.writeable = False
        return arr

    @property
    def valid(self) -> np.ndarray:
        return self.array[:, 5] > 0.5


@dataclass(frozen=True)
class Scenario:
    id: str
    timestep: float
    history_len: int
    future_len: int
    lanes: tuple[Lane, ...]
    polylines: tuple[MapPolyline, ...]
    tracks: tuple[AgentTrack, ...]
    targets: tuple[str, ...]

    def __post_init__(self):
        validate_scenario(self)

    @property
    def horizon(self) -> int:
        return self.history_len + 1 + self.future_len

    @cached_property
    def track_by_id(self) -> dict[str, AgentTrack]:
        return {t.id: t for t in self.tracks}

    @cached_property
    def lane_by_id(self) -> dict[str, Lane]:
        return {lane.id: lane for lane in self.lanes}

    @cached_property
    def polyline_by_id(self) -> dict[str, MapPolyline]:
        return {p.id: p for p in self.polylines}

    def centerline(self, lane_id: str) -> np.ndarray:
        return self.polyline_by_id[self.lane_by_id[lane_id].centerline].xy

    def track(self, agent_id: str) -> AgentTrack:
        try:
            return self.track_by_id[agent_id]
        except KeyError:
            raise KeyError(f"unknown agent id {agent_id!r}") from None


def current_state(scenario: Scenario, agent_id: str) -> AgentState:
    """State of ``agent_id`` at the current step (index ``history_len``)."""
    return scenario.track(agent_id).states[scenario.history_len]


# --------------------------------------------------------------------------
# validation


def _check_finite_coord(value: float, where: str) -> None:
    if not math.isfinite(value) or abs(value) > COORD_LIMIT:
        raise ScenarioValidationError(f"coordinate out of range at {where}: {value}")


def validate_scenario(s: Scenario) -> None:
    if not s.timestep > 0:
        raise ScenarioValidationError(f"timestep must be positive, got {s.timestep}")
    if s.history_len < 0 or s.future_len < 0:
        raise ScenarioValidationError("history_len and future_len must be non-negative")

    poly_ids = set()
    for poly in s.polylines:
        if poly.id in poly_ids:
            raise ScenarioValidationError(f"duplicate polyline id {poly.id!r}")
        poly_ids.add(poly.id)
        if poly.kind not in POLYLINE_KINDS:
            raise ScenarioValidationError(f"polyline {poly.id!r} has unknown kind {poly.kind!r}")
        if len(poly.points) < 2:
            raise ScenarioValidationError(f"polyline {poly.id!r} needs at least 2 points")
        for i, (x, y) in enumerate(poly.points):
            _check_finite_coord(x, f"polyline {poly.id!r} point {i}")
            _check_finite_coord(y, f"polyline {poly.id!r} point {i}")
            if i and poly.points[i - 1] == (x, y):
                raise ScenarioValidationError(
                    f"polyline {poly.id!r} repeats point {i - 1} at index {i}"
                )

    kinds = {p.id: p.kind for p in s.polylines}
    lane_ids = [lane.id for lane in s.lanes]
    if len(set(lane_ids)) != len(lane_ids):
        raise ScenarioValidationError("duplicate lane ids")
    known = set(lane_ids)
    for lane in s.lanes:
        if lane.centerline not in kinds:
            raise ScenarioValidationError(
                f"lane {lane.id!r} centerline {lane.centerline!r} does not resolve"
            )
        if kinds[lane.centerline] != "lane_centerline":
            raise ScenarioValidationError(
                f"lane {lane.id!r} centerline {lane.centerline!r} is not a lane_centerline"
            )
        for ref in (*lane.children, *lane.neighbors):
            if ref not in known:
                raise ScenarioValidationError(f"lane {lane.id!r} references unknown lane {ref!r}")
        if lane.id in lane.children:
            raise ScenarioValidationError(f"lane {lane.id!r} lists itself as a child")

    track_ids = set()
    for track in s.tracks:
        if track.id in track_ids:
            raise ScenarioValidationError(f"duplicate track id {track.id!r}")
        track_ids.add(track.id)
        if track.kind not in AGENT_KINDS:
            raise ScenarioValidationError(f"track {track.id!r} has unknown kind {track.kind!r}")
        if len(track.states) != s.horizon:
            raise ScenarioValidationError(
                f"track {track.id!r} has {len(track.states)} states, expected {s.horizon}"
            )
        any_valid = False
        for t, st in enumerate(track.states):
            where = f"track {track.id!r} step {t}"
            if not st.valid:
                if any(v != 0.0 for v in st[:5]):
                    raise ScenarioValidationError(f"invalid state with nonzero fields at {where}")
                continue
            any_valid = True
            for v in st[:5]:
                _check_finite_coord(v, where)
            if not (-math.pi - _HEADING_SLACK < st.heading <= math.pi + _HEADING_SLACK):
                raise ScenarioValidationError(f"heading not normalized at {where}")
        if any_valid and not (track.length > 0 and track.width > 0):
            raise ScenarioValidationError(f"track {track.id!r} needs positive length and width")

    if not 1 <= len(s.targets) <= len(s.tracks):
        raise ScenarioValidationError("need between 1 and len(tracks) targets")
    for target in s.targets:
        if target not in track_ids:
            raise ScenarioValidationError(f"target {target!r} is not a track id")


# --------------------------------------------------------------------------
# JSON (de)serialization


def _require(obj: dict, key: str, path: str, types) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioSchemaError(f"{path}.{key}" if path else key)
    value = obj[key]
    if types is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        raise ScenarioSchemaError(f"{path}.{key}" if path else key, "wrong type for field")
    return value


def _pairs(raw: list, path: str) -> tuple[Waypoint, ...]:
    out = []
    for i, pt in enumerate(raw):
        if not (
            isinstance(pt, list)
            and len(pt) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pt)
        ):
            raise ScenarioSchemaError(f"{path}[{i}]", "expected [x, y]")
        out.append(Waypoint(float(pt[0]), float(pt[1])))
    return tuple(out)


def _states(raw: list, path: str) -> tuple[AgentState, ...]:
    out = []
    for i, row in enumerate(raw):
        if not (isinstance(row, list) and len(row) == 6):
            raise ScenarioSchemaError(f"{path}[{i}]", "expected [x, y, heading, vx, vy, valid]")
        *nums, valid = row
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in nums):
            raise ScenarioSchemaError(f"{path}[{i}]", "non-numeric state entry")
        if not isinstance(valid, bool):
            raise ScenarioSchemaError(f"{path}[{i}]", "valid flag must be a boolean")
        out.append(AgentState(*(float(v) for v in nums), valid))
    return tuple(out)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a validated :class:`Scenario` from decoded JSON."""
    if not isinstance(data, dict):
        raise ScenarioSchemaError("<root>", "expected a JSON object")
    lanes = []
    for i, raw in enumerate(_require(data, "lanes", "", list)):
        p = f"lanes[{i}]"
        speed = raw.get("speed_limit") if isinstance(raw, dict) else None
        if speed is not None and not isinstance(speed, (int, float)):
            raise ScenarioSchemaError(f"{p}.speed_limit", "wrong type for field")
        lanes.append(
            Lane(
                id=_require(raw, "id", p, str),
                centerline=_require(raw, "centerline", p, str),
                children=tuple(_require(raw, "children", p, list)),
                neighbors=tuple(_require(raw, "neighbors", p, list)),
                speed_limit=None if speed is None else float(speed),
            )
        )
    polylines = []
    for i, raw in enumerate(_require(data, "polylines", "", list)):
        p = f"polylines[{i}]"
        polylines.append(
            MapPolyline(
                id=_require(raw, "id", p, str),
                kind=_require(raw, "kind", p, str),
                points=_pairs(_require(raw, "points", p, list), f"{p}.points"),
            )
        )
    tracks = []
    for i, raw in enumerate(_require(data, "tracks", "", list)):
        p = f"tracks[{i}]"
        tracks.append(
            AgentTrack(
                id=_require(raw, "id", p, str),
                kind=_require(raw, "kind", p, str),
                length=float(_require(raw, "length", p, float)),
                width=float(_require(raw, "width", p, float)),
                states=_states(_require(raw, "states", p, list), f"{p}.states"),
            )
        )
    return Scenario(
        id=_require(data, "id", "", str),
        timestep=float(_require(data, "timestep", "", float)),
        history_len=_require(data, "history_len", "", int),
        future_len=_require(data, "future_len", "", int),
        lanes=tuple(lanes),
        polylines=tuple(polylines),
        tracks=tuple(tracks),
        targets=tuple(_require(data, "targets", "", list)),
    )


def scenario_to_dict(s: Scenario) -> dict:
    lanes = []
    for lane in s.lanes:
        entry = {
            "id": lane.id,
            "centerline": lane.centerline,
            "children": list(lane.children),
            "neighbors": list(lane.neighbors),
        }
        if lane.speed_limit is not None:
            entry["speed_limit"] = lane.speed_limit
        lanes.append(entry)
    return {
        "id": s.id,
        "timestep": s.timestep,
        "history_len": s.history_len,
        "future_len": s.future_len,
        "lanes": lanes,
        "polylines": [
            {"id": p.id, "kind": p.kind, "points": [list(pt) for pt in p.points]}
            for p in s.polylines
        ],
        "tracks": [
            {
                "id": t.id,
                "kind": t.kind,
                "length": t.length,
                "width": t.width,
                "states": [list(st) for st in t.states],
            }
            for t in s.tracks
        ],
        "targets": list(s.targets),
    }


def format_float(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys, no whitespace and 6-decimal floats."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if obj is None:
        return "null"
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(f"{json.dumps(k)}:{canonical_json(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    raise TypeError(f"unsupported type {type(obj).__name__}")


def dumps_scenario(s: Scenario) -> str:
    return canonical_json(scenario_to_dict(s)) + "\n"


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"malformed JSON: {exc}") from exc
    return scenario_from_dict(data)


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioParseError(f"{path} is not UTF-8: {exc}") from exc
    return loads_scenario(text)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


def load_scenarios(paths: Iterable[str | Path]) -> list[Scenario]:
    return [load_scenario(p) for p in paths]


def quantize(value: float) -> float:
    """Round to the precision kept by the canonical file format."""
    return float(format_float(value))
