import copy
import json

import pytest

from guidedmotion.scenario import (
    ScenarioParseError,
    ScenarioSchemaError,
    ScenarioValidationError,
    current_state,
    dumps_scenario,
    load_scenario,
    loads_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from guidedmotion.worlds import TEMPLATES, WorldSpec, generate


def minimal_dict():
    return {
        "id": "tiny",
        "timestep": 0.1,
        "history_len": 1,
        "future_len": 1,
        "lanes": [{"id": "L0", "centerline": "c0", "children": [], "neighbors": []}],
        "polylines": [{"id": "c0", "kind": "lane_centerline", "points": [[0, 0], [10, 0]]}],
        "tracks": [
            {
                "id": "A0",
                "kind": "vehicle",
                "length": 4.5,
                "width": 2.0,
                "states": [[0, 0, 0, 1, 0, True], [0.1, 0, 0, 1, 0, True], [0, 0, 0, 0, 0, False]],
            }
        ],
        "targets": ["A0"],
    }


def test_minimal_file_loads(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(minimal_dict()))
    s = load_scenario(path)
    assert len(s.tracks) == 1
    assert s.targets == ("A0",)


def test_dangling_child_is_named():
    data = minimal_dict()
    data["lanes"][0]["children"] = ["L9"]
    with pytest.raises(ScenarioValidationError, match="L9"):
        scenario_from_dict(data)


def test_malformed_json_is_a_parse_error():
    with pytest.raises(ScenarioParseError):
        loads_scenario("{not json")


def _required_paths(data, prefix=()):
    """Every required key path in a scenario dict (speed_limit is optional)."""
    if isinstance(data, dict):
        for key, value in data.items():
            if key == "speed_limit":
                continue
            yield prefix + (key,)
            yield from _required_paths(value, prefix + (key,))
    elif isinstance(data, list) and data and isinstance(data[0], dict):
        for i, item in enumerate(data):
            yield from _required_paths(item, prefix + (i,))


def test_deleting_any_required_field_is_rejected():
    base = minimal_dict()
    paths = list(_required_paths(base))
    assert len(paths) > 15
    for path in paths:
        data = copy.deepcopy(base)
        node = data
        for key in path[:-1]:
            node = node[key]
        del node[path[-1]]
        with pytest.raises(ScenarioSchemaError) as info:
            scenario_from_dict(data)
        assert str(path[-1]) in info.value.field


@pytest.mark.parametrize("template", TEMPLATES)
def test_round_trip_is_byte_identical(template, tmp_path):
    s = generate(WorldSpec(template=template, seed=3, lane_count=2))
    path = tmp_path / "w.json"
    save_scenario(s, path)
    first = path.read_bytes()
    loaded = load_scenario(path)
    assert loaded == s
    save_scenario(loaded, path)
    assert path.read_bytes() == first
    assert dumps_scenario(s) == dumps_scenario(s)


def test_single_coordinate_change_differs_in_one_token():
    s = generate(WorldSpec(seed=1))
    data = scenario_to_dict(s)
    data["tracks"][0]["states"][4][0] += 0.5
    changed = scenario_from_dict(data)
    a = dumps_scenario(s).replace("[", " ").replace("]", " ").replace(",", " ").split()
    b = dumps_scenario(changed).replace("[", " ").replace("]", " ").replace(",", " ").split()
    assert len(a) == len(b)
    diffs = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
    assert len(diffs) == 1
    assert float(b[diffs[0]]) - float(a[diffs[0]]) == pytest.approx(0.5)


def test_current_state_indexing():
    s = generate(WorldSpec(seed=2))
    for track in s.tracks:
        assert current_state(s, track.id) == track.states[s.history_len]
    with pytest.raises(KeyError):
        current_state(s, "nobody")


def test_current_state_keeps_invalid_flag():
    data = minimal_dict()
    data["tracks"][0]["states"][1] = [0, 0, 0, 0, 0, False]
    s = scenario_from_dict(data)
    assert current_state(s, "A0").valid is False


def test_invalid_state_with_payload_rejected():
    data = minimal_dict()
    data["tracks"][0]["states"][2] = [1, 0, 0, 0, 0, False]
    with pytest.raises(ScenarioValidationError):
        scenario_from_dict(data)


def test_unknown_target_rejected():
    data = minimal_dict()
    data["targets"] = ["ghost"]
    with pytest.raises(ScenarioValidationError, match="ghost"):
        scenario_from_dict(data)
