import random

import pytest

from conftest import two_table_doc
from rearrangekit.agents import advertised_actions
from rearrangekit.env import (
    ENDED,
    NOTICE_INVALID,
    NOTICE_NO_ROTATE,
    NOTICE_PLACED,
    RUNNING,
    CallEnd,
    ChangeView,
    GoTo,
    ParseError,
    Pick,
    PlaceR,
    PlaceS,
    ShowReceptacle,
    UnreachableTask,
    available_actions,
    format_action,
    parse_action,
    reset,
    run_actions,
    step,
    trace_jsonl,
)
from rearrangekit.goals import AtomicAction, PlacementGoal, Strategy
from rearrangekit.receptacles import Direction
from rearrangekit.scene import HELD, graph_from_document
from rearrangekit.tasks import make_task, sample_process_tasks

TOP = "object_table_1_platform_0"
SIDE = "object_side_1_platform_0"


@pytest.mark.parametrize(
    "text, expected",
    [
        ("place_s_[(1,7),(1,8),(2,3),(2,4)]", PlaceS(((1, 7), (1, 8), (2, 3), (2, 4)))),
        ("go_to_object_dining_table_mella_platform_0", GoTo("object_dining_table_mella_platform_0")),
        ("rotate_observation_view_of_current_platform", ChangeView()),
        ("change_view", ChangeView()),
        ("pick_object_3_of_current_platform", Pick(3)),
        ("show_receptacles_of_object_2_of_current_platform", ShowReceptacle(2)),
        ("show_receptacle_of_object_2_of_current_platform", ShowReceptacle(2)),
        ("place_r", PlaceR()),
        ("place_s_[1, 2,5]", PlaceS((1, 2, 5))),
        ("call_end", CallEnd()),
        ('  "CALL_END"  \nbecause I am done', CallEnd()),
    ],
)
def test_parse(text, expected):
    assert parse_action(text) == expected


@pytest.mark.parametrize("text", ["", "fly", "place_s_[]", "pick_object_0_of_current_platform", "place_s_[(1,2),3]"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_action(text)


def test_tolerant_and_strict_pick():
    assert parse_action("pick_15_of_current_platform") == Pick(15)
    with pytest.raises(ParseError):
        parse_action("pick_15_of_current_platform", strict=True)


def test_format_round_trip():
    for cmd in (GoTo("object_x_platform_0"), ChangeView(), Pick(2), ShowReceptacle(4), PlaceR(),
                PlaceS(((1, 2), (3, 4))), PlaceS((5,)), CallEnd()):
        assert parse_action(format_action(cmd), strict=True) == cmd


def _scene():
    items = [
        ("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1),
        ("book_1", "book_red_novel", (2.0, 0.5, 2.3, 0.9), 0.05),
    ]
    return graph_from_document(two_table_doc(items))


def _task(g, goal=None):
    goal = goal or PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE)
    return make_task(g, [AtomicAction("mug_1", goal)])


def test_reset_intro_and_limit():
    g = _scene()
    state, obs = reset(_task(g), g)
    assert state.limit == 20 and state.location == "start"
    assert "Initially, kitchenware_white_mug is on object_table_1_platform_0." in obs
    assert f"- go_to_{SIDE}" in obs and "- CALL_END" in obs
    assert "Steps used: 0/20." in obs


def test_unreachable_task():
    g = _scene()
    task = _task(g)
    doc = g.to_document()
    # the side table moves flush against the table and the walls close in
    side = next(o for o in doc["objects"] if o["id"] == "side_1")
    side["position"][0] = 3.5
    doc["bounds"] = [0.0, 0.0, 4.0, 2.0]
    walled = graph_from_document(doc)
    with pytest.raises(UnreachableTask):
        reset(task, walled)


def test_pick_place_r_and_end():
    g = _scene()
    state, _ = reset(_task(g), g, seed=3)
    obs, status = step(state, f"go_to_{TOP}")
    assert status == RUNNING
    # seen from the +x side the book (lower y) is on the robot's left
    assert {"object_1: book_red_novel", "object_2: kitchenware_white_mug"} <= set(obs.splitlines())
    mug_index = next(i for i, o in state.index_map.items() if o == "mug_1")
    step(state, f"pick_object_{mug_index}_of_current_platform")
    assert state.held == "mug_1" and state.graph.parent["mug_1"] == HELD
    step(state, f"go_to_{SIDE}")
    obs, _ = step(state, "place_r")
    assert NOTICE_PLACED in obs and state.held is None
    assert state.graph.parent["mug_1"] == SIDE
    obs, status = step(state, "CALL_END")
    assert status == ENDED and state.terminated


def test_invalid_action_consumes_step():
    g = _scene()
    state, _ = reset(_task(g), g)
    obs, _ = step(state, "dance")
    assert state.steps == 1 and NOTICE_INVALID in obs
    obs, _ = step(state, "place_r")  # nothing held
    assert state.steps == 2 and NOTICE_INVALID in obs
    assert [r["accepted"] for r in state.trace] == [False, False]


def test_single_view_rotation_notice():
    g = _scene()
    doc = g.to_document()
    doc["bounds"] = [4.0, 0.0, 5.0, 2.0]  # walls on three sides of the side table
    doc["objects"] = [o for o in doc["objects"] if o["id"] == "side_1"]
    doc["objects"].append({"id": "mug_1", "name": "kitchenware_white_mug", "position": [4.5, 0.5, 0.65],
                           "half_extents": [0.05, 0.05, 0.05]})
    small = graph_from_document(doc)
    assert len(small.walkable["side_1"]) == 1
    task = make_task(small, [AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM_DIR, platform=SIDE,
                                                                  direction=Direction.FRONT_LEFT))])
    state, _ = reset(task, small)
    step(state, f"go_to_{SIDE}")
    obs, _ = step(state, "change_view")
    assert NOTICE_NO_ROTATE in obs and state.steps == 2


def test_step_limit_ends_episode():
    g = _scene()
    state, _ = reset(_task(g), g)
    status = RUNNING
    for _ in range(20):
        _, status = step(state, "change_view")
    assert status == ENDED and state.steps == 20
    with pytest.raises(RuntimeError):
        step(state, "CALL_END")


def test_show_and_place_s():
    g = _scene()
    goal = PlacementGoal(Strategy.AROUND_OBJECT, anchors=("book_1",))
    state, _ = reset(_task(g, goal), g)
    step(state, f"go_to_{TOP}")
    idx = {o: i for i, o in state.index_map.items()}
    step(state, f"pick_object_{idx['mug_1']}_of_current_platform")
    book = next(i for i, o in state.index_map.items() if o == "book_1")
    obs, _ = step(state, f"show_receptacle_of_object_{book}_of_current_platform")
    assert f"Receptacles of object_{book}:" in obs
    pair = next(a for a in advertised_actions(obs) if a.startswith("place_s_"))
    obs, _ = step(state, pair)
    assert NOTICE_PLACED in obs
    assert state.trace[-1]["state_delta"]["placed"]["fallback"] is False


def test_duplicate_category_shown_bare():
    items = [
        ("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1),
        ("mug_2", "kitchenware_grey_mug", (2.0, 1.0, 2.1, 1.1), 0.1),
    ]
    g = graph_from_document(two_table_doc(items))
    state, _ = reset(_task(g), g)
    obs, _ = step(state, f"go_to_{TOP}")
    assert "object_1: kitchenware" in obs.splitlines() and "object_2: kitchenware" in obs.splitlines()
    step(state, "pick_object_1_of_current_platform")
    assert f"And you are holding {g.objects[state.held].name}." in state.observations[-1]


def test_empty_platform_grid_actions():
    g = _scene()
    state, _ = reset(_task(g), g)
    step(state, f"go_to_{TOP}")
    i = next(i for i, o in state.index_map.items() if o == "mug_1")
    step(state, f"pick_object_{i}_of_current_platform")
    obs, _ = step(state, f"go_to_{SIDE}")
    acts = advertised_actions(obs)
    assert [f"place_s_[{k}]" for k in range(1, 10)] == [a for a in acts if a.startswith("place_s_")]
    obs, _ = step(state, "place_s_[(1,2)]")
    assert NOTICE_INVALID in obs and state.held == "mug_1"
    obs, _ = step(state, "place_s_[5]")
    assert NOTICE_PLACED in obs


def test_replay_is_deterministic():
    g = _scene()
    task = _task(g)
    acts = [f"go_to_{TOP}", "pick_object_1_of_current_platform", "pick_object_2_of_current_platform",
            f"go_to_{SIDE}", "place_r", "CALL_END"]
    a = run_actions(task, g, acts, seed=5)
    b = run_actions(task, g, acts, seed=5)
    assert trace_jsonl(a) == trace_jsonl(b)
    assert a.observations == b.observations


def test_advertised_actions_round_trip_and_conservation(apartment):
    rng = random.Random(0)
    tasks = sample_process_tasks(apartment, 5, seed=2)
    n_objects = len(apartment.objects)
    for t in tasks:
        state, obs = reset(t, apartment, seed=1, strict=True)
        while not state.terminated:
            flat = [a for grp in available_actions(state) for a in grp]
            assert flat == advertised_actions(obs)
            for a in flat:
                parse_action(a, strict=True)
            obs, _ = step(state, rng.choice(flat))
            assert state.trace[-1]["accepted"]
            assert len(state.graph.objects) == n_objects
            assert sum(1 for p in state.graph.parent.values() if p == HELD) == (state.held is not None)
