"""Process-based task generation (levels 1 to 3).

Atomic actions are derived per movable object on a scratch view of every
navigable platform with that object lifted off. Two-step tasks are chained
through the interaction cycle: step one is applied to a copy of the graph and
step two is derived from the resulting state.
"""

from __future__ import annotations

import hashlib
import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .goals import (
    AtomicAction,
    PlacementGoal,
    PlannedPlacement,
    PlatformView,
    Strategy,
    apply_relocation,
    check_goal,
    object_footprint,
    plan_all_on_view,
    platform_view,
)
from .scene import SceneGraph

CONNECTORS = ("THEN", "AND", "OR")
STEP_LIMITS = {1: 20, 2: 20, 3: 40}


class InsufficientActions(UserWarning):
    """Fewer distinct feasible tasks exist than were requested."""


class TaskError(ValueError):
    pass


@dataclass
class TaskSpec:
    task_id: str
    level: int
    instruction: str
    steps: List[AtomicAction] = field(default_factory=list)
    connector: Optional[str] = None
    template_id: Optional[str] = None
    bindings: Optional[dict] = None
    ambiguity: Optional[dict] = None
    scene: Optional[str] = None

    def __post_init__(self):
        if self.level == 3 and (len(self.steps) != 2 or self.connector not in CONNECTORS):
            raise TaskError("a level-3 task has two steps and a connector")
        if self.level in (1, 2) and len(self.steps) != 1:
            raise TaskError("level 1 and 2 tasks have exactly one step")
        if self.level == 4 and (self.steps or not self.template_id):
            raise TaskError("a level-4 task has a template and no steps")

    @property
    def step_limit(self) -> int:
        return STEP_LIMITS.get(self.level, 40)

    def to_dict(self) -> dict:
        d: Dict[str, object] = {"task_id": self.task_id, "level": self.level, "instruction": self.instruction}
        if self.scene is not None:
            d["scene"] = self.scene
        if self.connector is not None:
            d["connector"] = self.connector
        d["steps"] = [s.to_dict() for s in self.steps]
        if self.template_id is not None:
            d["template_id"] = self.template_id
            d["bindings"] = self.bindings or {}
        if self.ambiguity is not None:
            d["ambiguity"] = self.ambiguity
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            task_id=d["task_id"],
            level=int(d["level"]),
            instruction=d["instruction"],
            steps=[AtomicAction.from_dict(s) for s in d.get("steps") or []],
            connector=d.get("connector"),
            template_id=d.get("template_id"),
            bindings=d.get("bindings"),
            ambiguity=d.get("ambiguity"),
            scene=d.get("scene"),
        )


# ---------------------------------------------------------------------------
# atomic actions


@dataclass(frozen=True)
class FeasibleAction:
    action: AtomicAction
    plan: PlannedPlacement


class ActionDeriver:
    """Derives feasible relocations, memoizing per platform content and object size."""

    def __init__(self):
        self._plans: Dict[tuple, List[Tuple[PlacementGoal, PlannedPlacement]]] = {}
        self._views: Dict[tuple, PlatformView] = {}

    @staticmethod
    def _key(graph: SceneGraph, pid: str, obj: str) -> tuple:
        content = tuple(
            (o, tuple(round(v, 9) for v in graph.footprint(o).as_list())) for o in graph.children(pid) if o != obj
        )
        fp = graph.footprint(obj)
        plat = graph.platforms[pid]
        return (pid, plat.rect, content, round(fp.width, 9), round(fp.depth, 9), round(graph.objects[obj].height, 9))

    def view(self, graph: SceneGraph, pid: str, key: tuple) -> PlatformView:
        vkey = key[:3]
        hit = self._views.get(vkey)
        if hit is None:
            content = {o for o, _ in key[2]}
            excluded = [o for o in graph.children(pid) if o not in content]
            hit = platform_view(graph, pid, exclude=excluded[0] if excluded else None)
            self._views[vkey] = hit
        return hit

    def plans_on(self, graph: SceneGraph, pid: str, obj: str) -> List[Tuple[PlacementGoal, PlannedPlacement]]:
        key = self._key(graph, pid, obj)
        hit = self._plans.get(key)
        if hit is None:
            view = self.view(graph, pid, key)
            hit = plan_all_on_view(view, object_footprint(graph, obj), graph.objects[obj].height)
            self._plans[key] = hit
        return hit

    def derive(self, graph: SceneGraph, objects: Optional[Iterable[str]] = None) -> List[FeasibleAction]:
        movable = graph.movable_objects()
        if objects is not None:
            wanted = set(objects)
            movable = [o for o in movable if o in wanted]
        targets = graph.navigable_platforms()
        out: List[FeasibleAction] = []
        for obj in movable:
            here = graph.parent[obj]
            here_regions = None
            for pid in targets:
                plans = self.plans_on(graph, pid, obj)
                if pid == here and plans:
                    here_regions = self.view(graph, pid, self._key(graph, pid, obj)).anchors
                for goal, planned in plans:
                    # no-op filter: a goal already met needs no relocation
                    if pid == here and check_goal(graph, obj, goal, here_regions)[0]:
                        continue
                    out.append(FeasibleAction(AtomicAction(obj, goal), planned))
        out.sort(key=lambda fa: fa.action.sort_key())
        return out


def derive_atomic_actions(graph: SceneGraph) -> List[AtomicAction]:
    return [fa.action for fa in ActionDeriver().derive(graph)]


# ---------------------------------------------------------------------------
# levels and instructions


def classify_level(task: TaskSpec, graph: SceneGraph) -> int:
    if task.level == 4 or task.template_id:
        return 4
    if len(task.steps) >= 2:
        return 3
    obj = task.steps[0].object
    return 2 if graph.same_category_count(obj) >= 2 else 1


def format_step(obj: str, goal: PlacementGoal, anchor_names: Sequence[str] = (), style: str = "canonical") -> str:
    """Instruction text for one relocation given display names."""
    s = goal.strategy
    if s is Strategy.TO_PLATFORM:
        return f"Move {obj} to {goal.platform}"
    if s is Strategy.TO_PLATFORM_DIR:
        return f"Move {obj} to the {goal.direction.label} of {goal.platform}"
    if s is Strategy.AROUND_OBJECT:
        return f"Move {obj} around {anchor_names[0]}"
    if s is Strategy.DIR_OF_OBJECT:
        if style == "receptacles":
            return f"Move {obj} to {anchor_names[0]}'s {goal.direction.label} receptacles"
        return f"Move {obj} to the {goal.direction.label} of {anchor_names[0]}"
    return f"Move {obj} between {anchor_names[0]} and {anchor_names[1]}"


def render_step(graph: SceneGraph, action: AtomicAction, style: str = "canonical") -> str:
    names = [graph.objects[a].name for a in action.goal.anchors]
    return format_step(graph.objects[action.object].name, action.goal, names, style)


def render_instruction(task: TaskSpec, graph: SceneGraph, style: str = "canonical") -> str:
    parts = [render_step(graph, a, style) for a in task.steps]
    return f" {task.connector} ".join(parts) if task.connector else parts[0]


def _task_id(scene: str, level: int, steps: Sequence[AtomicAction], connector: Optional[str]) -> str:
    payload = json.dumps([connector, [s.to_dict() for s in steps]], sort_keys=True)
    return f"{scene}-L{level}-{hashlib.sha1(payload.encode()).hexdigest()[:10]}"


def make_task(graph: SceneGraph, steps: Sequence[AtomicAction], connector: Optional[str] = None) -> TaskSpec:
    steps = list(steps)
    level = 3 if len(steps) > 1 else (2 if graph.same_category_count(steps[0].object) >= 2 else 1)
    task = TaskSpec(
        task_id=_task_id(graph.name, level, steps, connector),
        level=level,
        instruction="",
        steps=steps,
        connector=connector if len(steps) > 1 else None,
        scene=graph.name,
    )
    task.instruction = render_instruction(task, graph)
    if level == 2:
        obj = steps[0].object
        task.ambiguity = {"object": graph.objects[obj].name, "platform": graph.parent[obj]}
    return task


# ---------------------------------------------------------------------------
# sampling


def _insufficient(requested: int, available: int) -> None:
    warnings.warn(
        f"requested {requested} tasks but only {available} distinct feasible tasks exist",
        InsufficientActions,
        stacklevel=3,
    )


def sample_process_tasks(
    graph: SceneGraph,
    count: int,
    max_steps: int = 1,
    connectors: Sequence[str] = ("THEN",),
    seed: int = 0,
    levels: Optional[Iterable[int]] = None,
    deriver: Optional[ActionDeriver] = None,
) -> List[TaskSpec]:
    """Sample ``count`` tasks; single-step when ``max_steps`` is 1, chained pairs when 2."""
    if count < 0:
        raise TaskError("count must be non-negative")
    if max_steps not in (1, 2):
        raise TaskError("max_steps must be 1 or 2")
    for c in connectors:
        if c not in CONNECTORS:
            raise TaskError(f"unknown connector {c!r}")
    deriver = deriver or ActionDeriver()
    rng = random.Random(seed)
    pool = deriver.derive(graph)
    if max_steps == 1:
        keep = set(levels) if levels is not None else {1, 2}
        tasks = [make_task(graph, [fa.action]) for fa in pool]
        tasks = [t for t in tasks if t.level in keep]
        if count >= len(tasks):
            if count > len(tasks):
                _insufficient(count, len(tasks))
            return tasks
        picked = sorted(rng.sample(range(len(tasks)), count))
        return [tasks[i] for i in picked]
    return _sample_chained(graph, count, connectors, rng, pool, deriver)


def _sample_chained(graph, count, connectors, rng, pool, deriver) -> List[TaskSpec]:
    seen = set()
    tasks: List[TaskSpec] = []
    after_cache: Dict[int, List[FeasibleAction]] = {}
    attempts = 0
    budget = max(50, 20 * count)
    while len(tasks) < count and attempts < budget and pool:
        attempts += 1
        i = rng.randrange(len(pool))
        first = pool[i]
        after = apply_relocation(graph, first.action.object, first.plan)
        if i not in after_cache:
            after_cache[i] = [
                fa for fa in deriver.derive(after) if fa.action.object != first.action.object
            ]
        second_pool = after_cache[i]
        if not second_pool:
            continue
        second = second_pool[rng.randrange(len(second_pool))]
        key = (first.action, second.action)
        if key in seen:
            continue
        final = apply_relocation(after, second.action.object, second.plan)
        if not check_goal(final, first.action.object, first.action.goal)[0]:
            continue
        seen.add(key)
        connector = connectors[rng.randrange(len(connectors))]
        tasks.append(make_task(graph, [first.action, second.action], connector))
    if len(tasks) < count:
        _insufficient(count, len(tasks))
    return tasks


# ---------------------------------------------------------------------------
# JSONL


def dump_tasks(tasks: Iterable[TaskSpec], path, provenance: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for t in tasks:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def load_tasks(path) -> List[TaskSpec]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "provenance" in rec and "task_id" not in rec:
            continue
        out.append(TaskSpec.from_dict(rec))
    return out
