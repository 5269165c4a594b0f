import pytest

from conftest import two_table_doc
from rearrangekit.env import reset, run_actions, step
from rearrangekit.evaluation import (
    STAGES,
    EmptyResults,
    EpisodeResult,
    aggregate,
    combine_points,
    episodes_csv,
    evaluate_episode,
    score_intermediate,
)
from rearrangekit.goals import AtomicAction, PlacementGoal, Strategy
from rearrangekit.receptacles import Direction
from rearrangekit.scene import graph_from_document
from rearrangekit.tasks import TaskSpec, make_task

TOP = "object_table_1_platform_0"
SIDE = "object_side_1_platform_0"


def _scene():
    items = [
        ("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1),
        ("book_1", "book_red_novel", (2.0, 0.5, 2.2, 0.7), 0.05),
    ]
    return graph_from_document(two_table_doc(items))


def _index(state, oid):
    return next(i for i, o in state.index_map.items() if o == oid)


def _to_side_task(g):
    return make_task(g, [AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE))])


def _l3(g, connector):
    a = AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE))
    b = AtomicAction("book_1", PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE))
    return make_task(g, [a, b], connector=connector)


def test_three_of_four_stages_is_75():
    g = _scene()
    task = _to_side_task(g)
    state, _ = reset(task, g)
    step(state, f"go_to_{TOP}")
    step(state, f"pick_object_{_index(state, 'mug_1')}_of_current_platform")
    step(state, f"go_to_{SIDE}")
    step(state, "CALL_END")
    points, flags = score_intermediate(task, state.trace, g)
    assert flags == [dict(zip(STAGES, (True, True, True, False)))]
    assert points == 75
    result = evaluate_episode(task, g, state.trace)
    assert not result.success and result.intermediate_points == 75


def test_empty_trace_scores_zero():
    g = _scene()
    task = _to_side_task(g)
    assert score_intermediate(task, [], g)[0] == 0
    assert evaluate_episode(task, g, []).success is False


def test_full_episode_scores_100():
    g = _scene()
    task = _to_side_task(g)
    state, _ = reset(task, g)
    step(state, f"go_to_{TOP}")
    step(state, f"pick_object_{_index(state, 'mug_1')}_of_current_platform")
    step(state, f"go_to_{SIDE}")
    step(state, "place_r")
    step(state, "CALL_END")
    r = evaluate_episode(task, g, state.trace)
    assert r.success and r.intermediate_points == 100


def test_l3_sub_scores_average():
    g = _scene()
    task = _l3(g, "AND")
    assert combine_points(task, [100, 50]) == 75
    assert combine_points(_l3(g, "OR"), [100, 50]) == 100


def _carry_both(g, task, order):
    state, _ = reset(task, g)
    for oid, full in order:
        step(state, f"go_to_{TOP}")
        step(state, f"pick_object_{_index(state, oid)}_of_current_platform")
        if full:
            step(state, f"go_to_{SIDE}")
            step(state, "place_r")
    step(state, "CALL_END")
    return state


def test_l3_first_done_second_half():
    g = _scene()
    task = _l3(g, "AND")
    state = _carry_both(g, task, [("mug_1", True), ("book_1", False)])
    r = evaluate_episode(task, g, state.trace)
    assert r.intermediate_points == 75 and not r.success
    assert r.reason.startswith("Sub-task 2:")


def test_then_requires_order():
    g = _scene()
    then = _l3(g, "THEN")
    both = _l3(g, "AND")
    state = _carry_both(g, then, [("book_1", True), ("mug_1", True)])
    r_then = evaluate_episode(then, g, state.trace)
    r_and = evaluate_episode(both, g, state.trace)
    assert r_and.success and r_and.intermediate_points == 100
    assert not r_then.success and r_then.intermediate_points < 100
    state = _carry_both(g, then, [("mug_1", True), ("book_1", True)])
    assert evaluate_episode(then, g, state.trace).success


def test_or_needs_either():
    g = _scene()
    task = _l3(g, "OR")
    state = _carry_both(g, task, [("book_1", True)])
    r = evaluate_episode(task, g, state.trace)
    assert r.success and r.intermediate_points == 100


def _wrong_direction_episode():
    g = _scene()
    goal = PlacementGoal(Strategy.DIR_OF_OBJECT, direction=Direction.REAR_LEFT, anchors=("book_1",))
    task = make_task(g, [AtomicAction("mug_1", goal)])
    canonical = g.canonical_heading(TOP)
    state, _ = reset(task, g)
    step(state, f"go_to_{TOP}")
    while state.heading.front != canonical.front:
        step(state, "change_view")
    step(state, f"pick_object_{_index(state, 'mug_1')}_of_current_platform")
    book = _index(state, "book_1")
    step(state, f"show_receptacle_of_object_{book}_of_current_platform")
    rear_right = next(r.index for r in state.shown[book] if r.direction is Direction.REAR_RIGHT)
    step(state, f"place_s_[({book},{rear_right})]")
    step(state, "CALL_END")
    return task, g, state


def test_wrong_direction_reason():
    task, g, state = _wrong_direction_episode()
    r = evaluate_episode(task, g, state.trace)
    assert r.success is False
    assert r.reason == "Target object placed in wrong direction, expected: rear-left, found: rear-right"
    assert r.intermediate_points == 75


def test_replayed_judgment_matches_live_state():
    g = _scene()
    task = _to_side_task(g)
    acts = [f"go_to_{TOP}", "pick_object_2_of_current_platform", f"go_to_{SIDE}", "place_r", "CALL_END"]
    state = run_actions(task, g, acts, seed=4)
    r = evaluate_episode(task, g, state.trace)
    assert state.graph.parent["mug_1"] == SIDE and r.success


def _result(level, ok, ip):
    return EpisodeResult(f"t{level}{ok}{ip}", level, ok, ip, [], "", 3)


def test_aggregate_and_csv():
    rep = aggregate([_result(1, True, 100), _result(1, False, 50), _result(3, False, 25)])
    assert rep.row(1).sr_percent == 50 and rep.row(1).mean_ip == 75
    assert rep.overall.episodes == 3
    assert rep.overall.mean_ip == pytest.approx(175 / 3)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "level,episodes,mean_ip,sr_percent"
    assert lines[1] == "1,2,75.00,50.00"
    assert lines[-1] == "overall,3,58.33,33.33"
    assert episodes_csv([_result(1, True, 100)]).splitlines()[1] == "t1True100,1,true,100.00,3,"


def test_aggregate_empty():
    with pytest.raises(EmptyResults):
        aggregate([])


def test_result_round_trip():
    r = _result(2, False, 25)
    assert EpisodeResult.from_dict(r.to_dict()) == r


def test_l3_task_has_longer_limit():
    g = _scene()
    task = _l3(g, "THEN")
    assert isinstance(task, TaskSpec) and task.level == 3 and task.step_limit == 40
