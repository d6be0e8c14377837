import re
from collections import deque

import numpy as np
import pytest

from guidedmotion.geometry import polyline_segments, segments_intersect
from guidedmotion.kinematics import KinematicState, fit_controls
from guidedmotion.scenario import BOUNDARY_KINDS, dumps_scenario
from guidedmotion.worlds import TEMPLATES, WorldSpec, generate, generate_dataset


@pytest.mark.parametrize("template", TEMPLATES)
def test_same_seed_same_scenario(template):
    a = generate(WorldSpec(template=template, seed=11, agent_count=4))
    b = generate(WorldSpec(template=template, seed=11, agent_count=4))
    assert a == b
    assert dumps_scenario(a) == dumps_scenario(b)
    c = generate(WorldSpec(template=template, seed=12, agent_count=4))
    assert dumps_scenario(a) != dumps_scenario(c)


def test_dataset_ids_are_distinct():
    data = generate_dataset("curve", 5, seed=3)
    assert len({s.id for s in data}) == 5


def test_fourway_inbound_lanes_reach_three_outbound_arms():
    for lane_count in (1, 2):
        s = generate(WorldSpec(template="fourway", lane_count=lane_count))
        by_id = {lane.id: lane for lane in s.lanes}
        inbound = [lane.id for lane in s.lanes if re.match(r"^[NESW]b", lane.id)]
        assert inbound
        for start in inbound:
            seen = {start}
            todo = deque([start])
            while todo:
                lane = by_id[todo.popleft()]
                for nxt in (*lane.children, *lane.neighbors):
                    if nxt not in seen:
                        seen.add(nxt)
                        todo.append(nxt)
            arms = {m.group(1) for lid in seen if (m := re.match(r"^([NESW])f", lid))}
            assert len(arms) >= 3, (start, sorted(seen))


@pytest.mark.parametrize("template", TEMPLATES)
def test_futures_are_kinematically_exact(template):
    for seed in range(4):
        s = generate(WorldSpec(template=template, seed=seed, agent_count=3))
        for track in s.tracks:
            now = track.states[s.history_len]
            init = KinematicState(now.x, now.y, now.heading, float(np.hypot(now.vx, now.vy)))
            future = track.array[s.history_len + 1 :, :2]
            _, residual = fit_controls(init, future, s_limits(s))
            assert residual < 1e-6


def s_limits(s):
    from guidedmotion.kinematics import KinematicLimits

    return KinematicLimits(dt=s.timestep)


def _boundary_segments(s):
    return polyline_segments([p.xy for p in s.polylines if p.kind in BOUNDARY_KINDS])


@pytest.mark.parametrize("template", TEMPLATES)
@pytest.mark.parametrize("lane_count", [1, 2])
def test_boundaries_never_touch_centerlines(template, lane_count):
    s = generate(WorldSpec(template=template, lane_count=lane_count))
    segs = _boundary_segments(s)
    assert len(segs)
    for lane in s.lanes:
        pts = s.centerline(lane.id)
        a0, a1 = pts[:-1, None], pts[1:, None]
        hit = segments_intersect(a0, a1, segs[None, :, 0], segs[None, :, 1])
        assert not hit.any(), lane.id


def test_straight_single_lane_future_stays_inside():
    for seed in range(10):
        s = generate(WorldSpec(template="straight", agent_count=1, seed=seed))
        segs = _boundary_segments(s)
        path = s.tracks[0].array[s.history_len :, :2]
        hit = segments_intersect(path[:-1, None], path[1:, None], segs[None, :, 0], segs[None, :, 1])
        assert not hit.any()


def test_spec_validation():
    with pytest.raises(ValueError):
        WorldSpec(template="roundabout")
    with pytest.raises(ValueError):
        WorldSpec(lane_count=0)
    with pytest.raises(ValueError):
        WorldSpec(waypoint_spacing=0)
    with pytest.raises(ValueError):
        WorldSpec(agent_count=0)
