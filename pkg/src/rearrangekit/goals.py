"""Placement goals: what a relocation must achieve and how to reach it.

``check_goal`` is the success predicate for one relocation. ``plan_selection``
searches receptacle selections whose merged region admits a placement that
overlaps every selected receptacle; task generation, the oracle agent, and
the reflection summaries all share it, so whatever generation calls
feasible is exactly what the oracle later executes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .geometry import DEFAULT_MARGIN, EPS, Footprint, Placement, Rect, Region, find_placement, is_connected, rects_connected
from .receptacles import (
    COMPASS,
    GRID_INDEX,
    GRID_LAYOUT,
    Direction,
    grid_regions,
    refined_compass_regions,
)
from .scene import HELD, Heading, SceneGraph

MAX_MERGE = 4


class Strategy(str, Enum):
    TO_PLATFORM = "ToPlatform"
    TO_PLATFORM_DIR = "ToPlatformDir"
    AROUND_OBJECT = "AroundObject"
    DIR_OF_OBJECT = "DirOfObject"
    BETWEEN_OBJECTS = "BetweenObjects"


STRATEGY_ORDER = {s: i for i, s in enumerate(Strategy)}


@dataclass(frozen=True)
class PlacementGoal:
    strategy: Strategy
    platform: Optional[str] = None
    direction: Optional[Direction] = None
    anchors: Tuple[str, ...] = ()
    heading: Optional[Tuple[int, int]] = None  # frame that names the direction

    def __post_init__(self):
        s = self.strategy
        needs_dir = s in (Strategy.TO_PLATFORM_DIR, Strategy.DIR_OF_OBJECT)
        if needs_dir != (self.direction is not None):
            raise ValueError(f"{s.value}: direction {'required' if needs_dir else 'not allowed'}")
        n_anchor = {Strategy.AROUND_OBJECT: 1, Strategy.DIR_OF_OBJECT: 1, Strategy.BETWEEN_OBJECTS: 2}.get(s, 0)
        if len(self.anchors) != n_anchor:
            raise ValueError(f"{s.value}: expected {n_anchor} anchors")
        if s in (Strategy.TO_PLATFORM, Strategy.TO_PLATFORM_DIR) and not self.platform:
            raise ValueError(f"{s.value}: platform required")
        if s is Strategy.BETWEEN_OBJECTS and self.anchors[0] == self.anchors[1]:
            raise ValueError("BetweenObjects anchors must differ")

    def sort_key(self):
        return (
            STRATEGY_ORDER[self.strategy],
            self.platform or "",
            self.anchors,
            self.direction.value if self.direction else 0,
        )

    def to_dict(self) -> dict:
        d: Dict[str, object] = {"strategy": self.strategy.value}
        if self.platform is not None:
            d["platform"] = self.platform
        if self.direction is not None:
            d["direction"] = self.direction.key
        if self.anchors:
            d["anchors"] = list(self.anchors)
        if self.heading is not None:
            d["heading"] = list(self.heading)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementGoal":
        return cls(
            Strategy(d["strategy"]),
            d.get("platform"),
            Direction.parse(d["direction"]) if d.get("direction") else None,
            tuple(d.get("anchors") or ()),
            tuple(d["heading"]) if d.get("heading") else None,
        )


@dataclass(frozen=True)
class AtomicAction:
    object: str
    goal: PlacementGoal

    def sort_key(self):
        return (self.object,) + self.goal.sort_key()

    def to_dict(self) -> dict:
        d = {"object": self.object}
        d.update(self.goal.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicAction":
        return cls(d["object"], PlacementGoal.from_dict(d))


def goal_platform(graph: SceneGraph, goal: PlacementGoal) -> Optional[str]:
    """Platform the goal refers to, resolved in the given state."""
    if goal.platform is not None:
        return goal.platform
    p = graph.parent.get(goal.anchors[0])
    return None if p in (None, HELD) else p


def goal_heading(graph: SceneGraph, goal: PlacementGoal, platform_id: str) -> Heading:
    if goal.heading is not None:
        return Heading(graph.ground_owner(platform_id), tuple(goal.heading))
    return graph.canonical_heading(platform_id)


# ---------------------------------------------------------------------------
# success predicate


def _best_direction(fp: Rect, regions: Dict[int, Rect], heading: Heading) -> Optional[Direction]:
    best = None
    best_area = 0.0
    for c in sorted(regions, key=lambda c: Direction.from_compass(c, heading).value):
        area = fp.overlap_area(regions[c])
        if area > best_area + 1e-12:
            best, best_area = Direction.from_compass(c, heading), area
    return best


def _grid_label_at(platform: Rect, x: float, y: float, heading: Heading) -> str:
    regions = grid_regions(platform)
    for idx, d in enumerate(GRID_LAYOUT, start=1):
        key = None if d is None else d.compass(heading)
        if regions[key].contains_point(x, y):
            return d.label if d else "center"
    return "outside"


def check_goal(
    graph: SceneGraph,
    obj: str,
    goal: PlacementGoal,
    regions: Optional[Dict[str, Dict[int, Rect]]] = None,
) -> Tuple[bool, str]:
    """Whether ``obj`` satisfies ``goal`` in ``graph``, with a reason line.

    ``regions`` may carry the refined regions of the target platform computed
    without ``obj``; they are recomputed when omitted.
    """
    where = graph.parent.get(obj)
    if where == HELD:
        return False, "Target object is still held."
    if where is None:
        return False, "Target object is not on any platform."
    s = goal.strategy
    target = goal_platform(graph, goal)
    if target is None:
        return False, "Reference object is not on any platform."
    if where != target:
        if s in (Strategy.TO_PLATFORM, Strategy.TO_PLATFORM_DIR):
            return False, f"Target object placed on wrong platform, expected: {target}, found: {where}"
        return False, f"Target object not placed on the platform of {graph.objects[goal.anchors[0]].name}"
    fp = graph.footprint(obj)
    if s is Strategy.TO_PLATFORM:
        return True, "Target object placed on the target platform."
    heading = goal_heading(graph, goal, target)
    if s is Strategy.TO_PLATFORM_DIR:
        cx, cy = fp.center
        cell = grid_regions(graph.platforms[target].rect)[goal.direction.compass(heading)]
        if cell.contains_point(cx, cy):
            return True, "Target object placed in the correct direction."
        found = _grid_label_at(graph.platforms[target].rect, cx, cy, heading)
        return False, f"Target object placed in wrong direction, expected: {goal.direction.label}, found: {found}"

    if regions is None:
        regions = _anchor_regions(graph, target, exclude=obj)
    if s is Strategy.BETWEEN_OBJECTS:
        a, b = goal.anchors
        ra, rb = regions.get(a, {}), regions.get(b, {})
        for c in range(8):
            opp = (c + 4) % 8
            if c in ra and opp in rb and fp.overlaps(ra[c]) and fp.overlaps(rb[opp]):
                return True, "Target object placed between two objects."
        return False, "Target object not placed between the two objects."

    anchor = goal.anchors[0]
    ra = regions.get(anchor, {})
    if not any(fp.overlaps(r) for r in ra.values()):
        return False, f"Target object not placed around {graph.objects[anchor].name}."
    if s is Strategy.AROUND_OBJECT:
        return True, "Target object placed around the anchor object."
    want = goal.direction.compass(heading)
    if want in ra and fp.overlaps(ra[want]):
        return True, "Target object placed in the correct direction."
    found = _best_direction(fp, ra, heading)
    found_label = found.label if found else "none"
    return False, f"Target object placed in wrong direction, expected: {goal.direction.label}, found: {found_label}"


def _anchor_regions(graph: SceneGraph, platform_id: str, exclude: str) -> Dict[str, Dict[int, Rect]]:
    fps = {o: graph.footprint(o) for o in graph.children(platform_id) if o != exclude}
    return refined_compass_regions(graph.platforms[platform_id].rect, fps)


# ---------------------------------------------------------------------------
# selection planning


@dataclass(frozen=True)
class SelectionItem:
    """One receptacle in world terms: a grid cell or an anchor's region."""

    anchor: Optional[str]  # None for grid cells
    compass: Optional[int]  # None for the grid center
    rect: Rect


@dataclass(frozen=True)
class PlannedPlacement:
    platform: str
    selection: Tuple[SelectionItem, ...]
    placement: Placement


def object_footprint(graph: SceneGraph, obj: str) -> Footprint:
    return Footprint.of(graph.footprint(obj))


def connected_subsets(items: Sequence[SelectionItem], max_size: int = MAX_MERGE) -> Iterator[Tuple[int, ...]]:
    """Connected index subsets, by size then lexicographically."""
    n = len(items)
    adj = [[j for j in range(n) if j != i and rects_connected(items[i].rect, items[j].rect)] for i in range(n)]
    for size in range(1, max_size + 1):
        for combo in itertools.combinations(range(n), size):
            if size == 1 or _combo_connected(combo, adj):
                yield combo


def _combo_connected(combo: Tuple[int, ...], adj) -> bool:
    members = set(combo)
    seen = {combo[0]}
    stack = [combo[0]]
    while stack:
        i = stack.pop()
        for j in adj[i]:
            if j in members and j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(members)


def _try(items: Sequence[SelectionItem], fp: Footprint, margin: float, checked: bool = False) -> Optional[Placement]:
    rects = [it.rect for it in items]
    if not checked and len(rects) > 1 and not is_connected(rects):
        return None
    return find_placement(fp, Region.of(rects), margin, must_overlap=rects)


def _search(
    items: Sequence[SelectionItem], fp: Footprint, margin: float, max_size: int = MAX_MERGE
) -> Optional[Tuple[Tuple[SelectionItem, ...], Placement]]:
    if not items:
        return None
    union = find_placement(fp, Region.of([it.rect for it in items]), margin)
    if union is None:
        return None
    need_w = fp.width + 2 * margin - EPS
    need_d = fp.depth + 2 * margin - EPS
    for combo in connected_subsets(items, max_size):
        chosen = tuple(items[i] for i in combo)
        box = Region.of([it.rect for it in chosen]).bbox
        if box.width < need_w or box.depth < need_d:
            continue
        pl = _try(chosen, fp, margin, checked=True)
        if pl is not None:
            return chosen, pl
    return None


def _dedupe(items: Sequence[SelectionItem]) -> List[SelectionItem]:
    seen = set()
    out = []
    for it in items:
        key = tuple(round(v, 9) for v in it.rect.as_list())
        if key not in seen:
            seen.add(key)
            out.append(it)
    return out


@dataclass
class PlatformView:
    """Receptacle geometry of one platform with the moved object removed."""

    platform_id: str
    rect: Rect
    clearance: float
    heading: Heading
    anchors: Dict[str, Dict[int, Rect]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.anchors

    def grid_items(self) -> List[SelectionItem]:
        regs = grid_regions(self.rect)
        out = []
        for d in GRID_LAYOUT:
            key = None if d is None else d.compass(self.heading)
            out.append(SelectionItem(None, key, regs[key]))
        return out

    def anchor_items(self, anchor: str) -> List[SelectionItem]:
        regs = self.anchors.get(anchor, {})
        order = sorted(regs, key=lambda c: Direction.from_compass(c, self.heading).value)
        return [SelectionItem(anchor, c, regs[c]) for c in order]

    def all_items(self) -> List[SelectionItem]:
        if self.empty:
            return self.grid_items()
        return [it for a in sorted(self.anchors) for it in self.anchor_items(a)]


def platform_view(graph: SceneGraph, platform_id: str, exclude: Optional[str] = None) -> PlatformView:
    plat = graph.platforms[platform_id]
    fps = {o: graph.footprint(o) for o in graph.children(platform_id) if o != exclude}
    return PlatformView(
        platform_id,
        plat.rect,
        plat.clearance,
        graph.canonical_heading(platform_id),
        refined_compass_regions(plat.rect, fps),
    )


def plan_on_view(
    view: PlatformView, fp: Footprint, height: float, goal: PlacementGoal, margin: float = DEFAULT_MARGIN
) -> Optional[PlannedPlacement]:
    """Selection + placement reaching ``goal`` on this platform, or None."""
    if height > view.clearance + 1e-9:
        return None
    s = goal.strategy
    heading = view.heading if goal.heading is None else Heading(view.heading.ground_id, tuple(goal.heading))
    found = None
    if s is Strategy.TO_PLATFORM:
        found = _search(_dedupe(view.all_items()), fp, margin)
    elif s is Strategy.TO_PLATFORM_DIR:
        if not view.empty:
            return None
        key = goal.direction.compass(heading)
        cell = [it for it in view.grid_items() if it.compass == key]
        found = _search(cell, fp, margin, max_size=1)
    elif s is Strategy.AROUND_OBJECT:
        found = _search(view.anchor_items(goal.anchors[0]), fp, margin)
    elif s is Strategy.DIR_OF_OBJECT:
        key = goal.direction.compass(heading)
        items = [it for it in view.anchor_items(goal.anchors[0]) if it.compass == key]
        found = _search(items, fp, margin, max_size=1)
    elif s is Strategy.BETWEEN_OBJECTS:
        a, b = goal.anchors
        ra, rb = view.anchors.get(a, {}), view.anchors.get(b, {})
        for d in Direction:
            c = d.compass(heading)
            opp = (c + 4) % 8
            if c not in ra or opp not in rb:
                continue
            pair = (SelectionItem(a, c, ra[c]), SelectionItem(b, opp, rb[opp]))
            pl = _try(pair, fp, margin)
            if pl is not None:
                found = (pair, pl)
                break
    if found is None:
        return None
    selection, placement = found
    return PlannedPlacement(view.platform_id, selection, placement)


def candidate_goals(view: PlatformView) -> List[PlacementGoal]:
    """Every goal a relocation onto this platform could be asked to meet."""
    pid = view.platform_id
    front = view.heading.front
    goals = [PlacementGoal(Strategy.TO_PLATFORM, pid)]
    if view.empty:
        goals += [PlacementGoal(Strategy.TO_PLATFORM_DIR, pid, d, heading=front) for d in Direction]
        return goals
    anchors = sorted(view.anchors)
    for a in anchors:
        goals.append(PlacementGoal(Strategy.AROUND_OBJECT, anchors=(a,)))
        for d in Direction:
            if d.compass(view.heading) in view.anchors[a]:
                goals.append(PlacementGoal(Strategy.DIR_OF_OBJECT, direction=d, anchors=(a,), heading=front))
    for i, a in enumerate(anchors):
        for b in anchors[i + 1:]:
            goals.append(PlacementGoal(Strategy.BETWEEN_OBJECTS, anchors=(a, b)))
    return goals


def plan_all_on_view(
    view: PlatformView, fp: Footprint, height: float, margin: float = DEFAULT_MARGIN
) -> List[Tuple[PlacementGoal, PlannedPlacement]]:
    """Plans for every feasible candidate goal; same results as ``plan_on_view``.

    Single-receptacle searches come first in ``_search``, so the first
    feasible single-direction plan of an anchor (or of the grid) is also the
    Around (or ToPlatform) plan and is reused instead of searched again.
    """
    if height > view.clearance + 1e-9:
        return []
    goals = candidate_goals(view)
    singles: Dict[Tuple[Optional[str], Optional[int]], Optional[PlannedPlacement]] = {}
    items = view.grid_items() if view.empty else view.all_items()
    for it in items:
        pl = _try((it,), fp, margin)
        singles[(it.anchor, it.compass)] = None if pl is None else PlannedPlacement(view.platform_id, (it,), pl)

    def first_single(anchor_filter) -> Optional[PlannedPlacement]:
        for it in items:
            if anchor_filter(it) and singles[(it.anchor, it.compass)] is not None:
                return singles[(it.anchor, it.compass)]
        return None

    out = []
    for goal in goals:
        s = goal.strategy
        if s is Strategy.TO_PLATFORM:
            planned = first_single(lambda it: True) or plan_on_view(view, fp, height, goal, margin)
        elif s is Strategy.TO_PLATFORM_DIR:
            planned = singles.get((None, goal.direction.compass(view.heading)))
        elif s is Strategy.AROUND_OBJECT:
            a = goal.anchors[0]
            planned = first_single(lambda it: it.anchor == a) or plan_on_view(view, fp, height, goal, margin)
        elif s is Strategy.DIR_OF_OBJECT:
            planned = singles.get((goal.anchors[0], goal.direction.compass(view.heading)))
        else:
            planned = plan_on_view(view, fp, height, goal, margin)
        if planned is not None:
            out.append((goal, planned))
    return out


def plan_selection(graph: SceneGraph, obj: str, goal: PlacementGoal, margin: float = DEFAULT_MARGIN) -> Optional[PlannedPlacement]:
    """Plan the relocation of ``obj`` in the state ``graph`` (obj may be held)."""
    target = goal_platform(graph, goal)
    if target is None:
        return None
    view = platform_view(graph, target, exclude=obj)
    return plan_on_view(view, object_footprint(graph, obj), graph.objects[obj].height, goal, margin)


def apply_relocation(graph: SceneGraph, obj: str, planned: PlannedPlacement) -> SceneGraph:
    out = graph.copy()
    out.place(obj, planned.platform, planned.placement.footprint)
    return out


__all__ = [
    "AtomicAction",
    "PlacementGoal",
    "PlannedPlacement",
    "PlatformView",
    "SelectionItem",
    "Strategy",
    "apply_relocation",
    "check_goal",
    "goal_platform",
    "plan_selection",
    "platform_view",
    "plan_on_view",
    "plan_all_on_view",
    "candidate_goals",
    "COMPASS",
    "GRID_INDEX",
]
