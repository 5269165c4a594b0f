import json
import warnings

import pytest

from conftest import two_table_doc
from rearrangekit.goals import AtomicAction, PlacementGoal, Strategy, apply_relocation, check_goal, plan_selection
from rearrangekit.receptacles import Direction
from rearrangekit.scene import graph_from_document
from rearrangekit.tasks import (
    ActionDeriver,
    InsufficientActions,
    TaskError,
    TaskSpec,
    classify_level,
    derive_atomic_actions,
    dump_tasks,
    format_step,
    load_tasks,
    make_task,
    sample_process_tasks,
)

SIDE = "object_side_1_platform_0"
TOP = "object_table_1_platform_0"


def test_goal_validation():
    with pytest.raises(ValueError):
        PlacementGoal(Strategy.TO_PLATFORM_DIR, platform=TOP)
    with pytest.raises(ValueError):
        PlacementGoal(Strategy.AROUND_OBJECT, anchors=("a", "b"))
    with pytest.raises(ValueError):
        PlacementGoal(Strategy.BETWEEN_OBJECTS, anchors=("a", "a"))
    with pytest.raises(ValueError):
        PlacementGoal(Strategy.TO_PLATFORM)
    g = PlacementGoal(Strategy.DIR_OF_OBJECT, direction=Direction.REAR_LEFT, anchors=("bowl_1",))
    assert PlacementGoal.from_dict(g.to_dict()) == g


def test_taskspec_level_invariants():
    a = AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE))
    with pytest.raises(TaskError):
        TaskSpec("t", 3, "x", [a])
    with pytest.raises(TaskError):
        TaskSpec("t", 1, "x", [a, a])
    with pytest.raises(TaskError):
        TaskSpec("t", 4, "x", [a], template_id="T01")


def test_empty_side_table_target():
    g = graph_from_document(two_table_doc([("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1)]))
    actions = derive_atomic_actions(g)
    assert AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM, platform=SIDE)) in actions
    dirs = {a.goal.direction for a in actions if a.goal.strategy is Strategy.TO_PLATFORM_DIR and a.goal.platform == SIDE}
    assert len(dirs) == 8  # every grid cell except the center has a direction


def test_sliver_gap_gives_no_anchor_goals():
    items = [
        ("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1),
    ]
    doc = two_table_doc(items)
    # two books filling the side table with a 1 cm gap between them
    for oid, rect in (("book_1", (4.0, 0.0, 4.495, 1.0)), ("book_2", (4.505, 0.0, 5.0, 1.0))):
        x0, y0, x1, y1 = rect
        doc["objects"].append({"id": oid, "name": "book_red_novel", "position": [(x0 + x1) / 2, (y0 + y1) / 2, 0.625],
                               "half_extents": [(x1 - x0) / 2, (y1 - y0) / 2, 0.025]})
    g = graph_from_document(doc)
    mug_goals = [a.goal for a in derive_atomic_actions(g) if a.object == "mug_1"]
    assert not any(set(gl.anchors) & {"book_1", "book_2"} for gl in mug_goals)
    assert not any(gl.platform == SIDE for gl in mug_goals)


def _lamp_scene():
    items = [
        ("lamp_a", "lighting_blue_base_table_lamp", (0.5, 0.8, 0.8, 1.1), 0.4),
        ("lamp_b", "lighting_blue_base_table_lamp", (1.5, 0.8, 1.8, 1.1), 0.4),
    ]
    doc = two_table_doc(items)
    doc["objects"].append({"id": "holder_1", "name": "kitchenware_white_paper_towel_holder",
                           "position": [4.5, 0.5, 0.7], "half_extents": [0.08, 0.08, 0.1]})
    return graph_from_document(doc)


def test_between_lamps():
    g = _lamp_scene()
    between = [a for a in derive_atomic_actions(g)
               if a.object == "holder_1" and a.goal.strategy is Strategy.BETWEEN_OBJECTS]
    assert {frozenset(a.goal.anchors) for a in between} == {frozenset(("lamp_a", "lamp_b"))}
    task = make_task(g, [between[0]])
    assert task.instruction == (
        "Move kitchenware_white_paper_towel_holder between lighting_blue_base_table_lamp and lighting_blue_base_table_lamp"
    )
    planned = plan_selection(g, "holder_1", between[0].goal)
    after = apply_relocation(g, "holder_1", planned)
    assert check_goal(after, "holder_1", between[0].goal)[0]


def test_render_templates():
    dir_goal = PlacementGoal(Strategy.DIR_OF_OBJECT, direction=Direction.REAR_LEFT, anchors=("bowl_1",))
    assert format_step("Remote", dir_goal, ["Bowl"], style="receptacles") == "Move Remote to Bowl's rear-left receptacles"
    assert format_step("Remote", dir_goal, ["Bowl"]) == "Move Remote to the rear-left of Bowl"
    pdir = PlacementGoal(Strategy.TO_PLATFORM_DIR, platform=SIDE, direction=Direction.FRONT)
    assert format_step("mug", pdir) == f"Move mug to the front of {SIDE}"
    around = PlacementGoal(Strategy.AROUND_OBJECT, anchors=("b",))
    assert format_step("mug", around, ["book"]) == "Move mug around book"


def test_level_classification(apartment):
    books = [o for o in apartment.children(apartment.parent["book_1"]) if apartment.objects[o].category == "book"]
    assert len(books) >= 2
    pool = [a for a in derive_atomic_actions(apartment) if a.object == "book_1"]
    task = make_task(apartment, [pool[0]])
    assert task.level == 2 == classify_level(task, apartment)
    assert task.ambiguity == {"object": apartment.objects["book_1"].name, "platform": apartment.parent["book_1"]}
    # renaming the duplicates makes the same relocation level 1
    doc = apartment.to_document()
    for o in doc["objects"]:
        if o["id"] in books and o["id"] != "book_1":
            o["name"] = "magazine_" + o["name"].split("_", 1)[1]
    renamed = graph_from_document(doc)
    assert make_task(renamed, [pool[0]]).level == 1


def test_lamp_unique_level_one(apartment):
    lamp = next(o for o, ob in apartment.objects.items() if ob.name == "lighting_modern_table_lamp")
    a = next(a for a in derive_atomic_actions(apartment) if a.object == lamp)
    assert make_task(apartment, [a]).level == 1


def test_no_op_filter(apartment):
    for fa in ActionDeriver().derive(apartment):
        assert not check_goal(apartment, fa.action.object, fa.action.goal)[0]


def test_sampling_is_deterministic(apartment, tmp_path):
    a = sample_process_tasks(apartment, 40, seed=7)
    b = sample_process_tasks(apartment, 40, seed=7)
    assert [t.to_dict() for t in a] == [t.to_dict() for t in b]
    dump_tasks(a, tmp_path / "a.jsonl", {"seed": 7})
    dump_tasks(b, tmp_path / "b.jsonl", {"seed": 7})
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = load_tasks(tmp_path / "a.jsonl")
    assert [t.to_dict() for t in back] == [t.to_dict() for t in a]
    assert json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0]) == {"provenance": {"seed": 7}}


def test_chained_step_two_feasible_after_step_one(office):
    tasks = sample_process_tasks(office, 25, max_steps=2, seed=3)
    assert len(tasks) == 25
    for t in tasks:
        assert t.level == 3 and t.connector == "THEN" and " THEN " in t.instruction
        first, second = t.steps
        assert first.object != second.object
        p1 = plan_selection(office, first.object, first.goal)
        assert p1 is not None
        mid = apply_relocation(office, first.object, p1)
        p2 = plan_selection(mid, second.object, second.goal)
        assert p2 is not None
        end = apply_relocation(mid, second.object, p2)
        assert check_goal(end, first.object, first.goal)[0]
        assert check_goal(end, second.object, second.goal)[0]


def test_connectors_flag(office):
    tasks = sample_process_tasks(office, 12, max_steps=2, connectors=("AND", "OR"), seed=1)
    assert {t.connector for t in tasks} <= {"AND", "OR"}
    with pytest.raises(TaskError):
        sample_process_tasks(office, 1, max_steps=2, connectors=("XOR",))


def test_between_goals_touch_opposite_pair(apartment):
    for fa in ActionDeriver().derive(apartment):
        goal = fa.action.goal
        if goal.strategy is not Strategy.BETWEEN_OBJECTS:
            continue
        a, b = goal.anchors
        assert apartment.parent[a] == apartment.parent[b]
        after = apply_relocation(apartment, fa.action.object, fa.plan)
        assert check_goal(after, fa.action.object, goal)[0]


def test_insufficient_actions_warns():
    g = graph_from_document(two_table_doc([("mug_1", "kitchenware_white_mug", (1.0, 1.0, 1.1, 1.1), 0.1)]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tasks = sample_process_tasks(g, 100, seed=0)
    assert any(issubclass(w.category, InsufficientActions) for w in caught)
    assert len(tasks) == len(derive_atomic_actions(g)) < 100


def test_single_movable_single_receptacle():
    # two 20 cm stands: four merged grid cells hold the mug, a single cell does not
    doc = {"name": "tiny", "bounds": [-1, -1, 3, 2], "objects": [
        {"id": "stand_1", "name": "stand_small_round", "position": [0.0, 0.0, 0.4], "half_extents": [0.1, 0.1, 0.4]},
        {"id": "stand_2", "name": "stand_small_square", "position": [1.5, 0.0, 0.4], "half_extents": [0.1, 0.1, 0.4]},
        {"id": "mug_1", "name": "kitchenware_white_mug", "position": [0.0, 0.0, 0.85], "half_extents": [0.05, 0.05, 0.05]},
    ]}
    g = graph_from_document(doc)
    only = AtomicAction("mug_1", PlacementGoal(Strategy.TO_PLATFORM, platform="object_stand_2_platform_0"))
    assert derive_atomic_actions(g) == [only]
    with pytest.warns(InsufficientActions):
        tasks = sample_process_tasks(g, 100)
    assert len(tasks) == 1 and tasks[0].level == 1
