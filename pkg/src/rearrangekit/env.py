"""Text-mode episode environment: action grammar, transitions, observations."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .geometry import Footprint, Region, find_placement, is_connected
from .receptacles import GRID_LAYOUT, Direction, grid_regions, refined_compass_regions
from .scene import SceneError, SceneGraph, heading_for
from .tasks import TaskSpec

NOTICE_PLACED = (
    "The object has been placed successfully. You can now call end if you think you've finished the task "
    "correctly, or can also pick up the object again if you think the placement is not correct."
)
NOTICE_NO_ROTATE = "Unable to rotate to another view. The platform you at only have 1 walkable place for you."
NOTICE_INVALID = "Invalid action. Choose exactly one of the available actions listed below and output nothing else."
NOTICE_FALLBACK = (
    "No placement touches every selected receptacle, so the object was placed elsewhere inside the selected space."
)
NOTICE_NO_SPACE = "There is not enough space for the object in the selected receptacles."

RUNNING = "Running"
ENDED = "Ended"


class ParseError(ValueError):
    pass


class UnreachableTask(SceneError):
    pass


# ---------------------------------------------------------------------------
# commands


@dataclass(frozen=True)
class GoTo:
    platform_id: str


@dataclass(frozen=True)
class ChangeView:
    pass


@dataclass(frozen=True)
class Pick:
    index: int


@dataclass(frozen=True)
class ShowReceptacle:
    index: int


@dataclass(frozen=True)
class PlaceR:
    pass


@dataclass(frozen=True)
class PlaceS:
    selection: Tuple  # tuple of (object_index, receptacle_index) pairs, or of grid indices


@dataclass(frozen=True)
class CallEnd:
    pass


ActionCommand = Union[GoTo, ChangeView, Pick, ShowReceptacle, PlaceR, PlaceS, CallEnd]


def format_action(cmd: ActionCommand) -> str:
    """Canonical command string."""
    if isinstance(cmd, GoTo):
        return f"go_to_{cmd.platform_id}"
    if isinstance(cmd, ChangeView):
        return "change_view"
    if isinstance(cmd, Pick):
        return f"pick_object_{cmd.index}_of_current_platform"
    if isinstance(cmd, ShowReceptacle):
        return f"show_receptacle_of_object_{cmd.index}_of_current_platform"
    if isinstance(cmd, PlaceR):
        return "place_r"
    if isinstance(cmd, PlaceS):
        if cmd.selection and isinstance(cmd.selection[0], tuple):
            inner = ",".join(f"({i},{j})" for i, j in cmd.selection)
        else:
            inner = ",".join(str(i) for i in cmd.selection)
        return f"place_s_[{inner}]"
    return "CALL_END"


def action_to_dict(cmd: ActionCommand) -> dict:
    d: Dict[str, object] = {"type": type(cmd).__name__}
    if isinstance(cmd, GoTo):
        d["platform"] = cmd.platform_id
    elif isinstance(cmd, (Pick, ShowReceptacle)):
        d["index"] = cmd.index
    elif isinstance(cmd, PlaceS):
        d["selection"] = [list(s) if isinstance(s, tuple) else s for s in cmd.selection]
    return d


_PICK_STRICT = re.compile(r"pick_object_(\d+)_of_current_platform")
_PICK_LOOSE = re.compile(r"pick_(?:object_)?(\d+)(?:_of_current_platform)?")
_SHOW_STRICT = re.compile(r"show_receptacles?_of_object_(\d+)_of_current_platform")
_SHOW_LOOSE = re.compile(r"show_receptacles?_of_(?:object_)?(\d+)(?:_of_current_platform)?")
_PLACE_S = re.compile(r"place_s_\[(.*)\]")
_PAIR = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")
_QUOTES = "'\"`"


def _normalize(text: str) -> str:
    text = text.strip()
    lines = text.splitlines()
    line = lines[0].strip() if lines else ""
    while len(line) >= 2 and line[0] in _QUOTES and line[-1] == line[0]:
        line = line[1:-1].strip()
    return line


def _index(value: str) -> int:
    n = int(value)
    if n < 1:
        raise ParseError("indices start at 1")
    return n


def _parse_selection(inner: str) -> Tuple:
    inner = inner.strip()
    if not inner:
        raise ParseError("empty selection")
    if "(" in inner:
        pairs = _PAIR.findall(inner)
        if not pairs or _PAIR.sub("", inner).replace(",", "").strip():
            raise ParseError(f"malformed selection [{inner}]")
        return tuple((_index(i), _index(j)) for i, j in pairs)
    parts = [p.strip() for p in inner.split(",")]
    if not all(p.isdigit() for p in parts):
        raise ParseError(f"malformed selection [{inner}]")
    return tuple(_index(p) for p in parts)


def parse_action(text: str, strict: bool = False) -> ActionCommand:
    """Parse one action string; the first line is used, surrounding quotes are ignored."""
    line = _normalize(text)
    if not line:
        raise ParseError("empty action")
    low = line.lower()
    if low == "call_end":
        return CallEnd()
    cmd = line if strict else low
    if cmd.startswith("go_to_") or low.startswith("go_to_"):
        target = line[len("go_to_"):]
        if not target:
            raise ParseError("go_to needs a platform id")
        return GoTo(target)
    if cmd in ("change_view", "rotate_observation_view_of_current_platform"):
        return ChangeView()
    if cmd == "place_r":
        return PlaceR()
    m = (_PICK_STRICT if strict else _PICK_LOOSE).fullmatch(cmd)
    if m:
        return Pick(_index(m.group(1)))
    m = (_SHOW_STRICT if strict else _SHOW_LOOSE).fullmatch(cmd)
    if m:
        return ShowReceptacle(_index(m.group(1)))
    m = _PLACE_S.fullmatch(cmd)
    if m:
        return PlaceS(_parse_selection(m.group(1)))
    raise ParseError(f"unrecognized action {line!r}")


# ---------------------------------------------------------------------------
# state


@dataclass
class ShownReceptacle:
    index: int
    direction: Direction
    compass: int
    rect: object  # Rect


@dataclass
class EpisodeState:
    task: TaskSpec
    graph: SceneGraph
    initial: SceneGraph
    seed: int
    limit: int
    strict: bool = False
    rng: random.Random = field(default_factory=random.Random)
    ground: Optional[str] = None  # None at the start position
    space: int = 0
    platform: Optional[str] = None
    held: Optional[str] = None
    index_map: Dict[int, str] = field(default_factory=dict)
    shown: Dict[int, List[ShownReceptacle]] = field(default_factory=dict)
    steps: int = 0
    terminated: bool = False
    trace: List[dict] = field(default_factory=list)
    notice: Optional[str] = None
    observations: List[str] = field(default_factory=list)

    @property
    def location(self) -> str:
        if self.platform is None:
            return "start"
        side = self.graph.walkable[self.ground][self.space].side
        return f"{self.platform}@{side}"

    @property
    def heading(self):
        return heading_for(self.ground, self.graph.walkable[self.ground][self.space])

    @property
    def position(self) -> Tuple[float, float]:
        if self.ground is None:
            return self.graph.bounds.center
        return self.graph.walkable[self.ground][self.space].position


def _task_platforms(task: TaskSpec, graph: SceneGraph) -> List[str]:
    out = []
    for a in task.steps:
        out.append(graph.parent.get(a.object))
        if a.goal.platform:
            out.append(a.goal.platform)
        out += [graph.parent.get(x) for x in a.goal.anchors]
    return out


def reset(task: TaskSpec, graph: SceneGraph, seed: int = 0, strict: bool = False) -> Tuple[EpisodeState, str]:
    if task.level == 4 or not task.steps:
        raise UnreachableTask("outcome tasks run without automatic scoring")
    navigable = set(graph.navigable_platforms())
    for a in task.steps:
        if a.object not in graph.objects or any(x not in graph.objects for x in a.goal.anchors):
            raise UnreachableTask(f"{task.task_id}: unknown object")
    for pid in _task_platforms(task, graph):
        if pid not in navigable:
            raise UnreachableTask(f"{task.task_id}: {pid} is not reachable")
    state = EpisodeState(
        task=task,
        graph=graph.copy(),
        initial=graph,
        seed=seed,
        limit=task.step_limit,
        strict=strict,
        rng=random.Random(seed),
    )
    obs = render_observation(state, intro=True)
    state.observations.append(obs)
    return state, obs


# ---------------------------------------------------------------------------
# views of the current platform


def display_name(graph: SceneGraph, oid: str, platform_id: str) -> str:
    obj = graph.objects[oid]
    if graph.same_category_count(oid, platform_id) >= 2:
        return obj.category
    return obj.name


def index_objects(graph: SceneGraph, platform_id: str, heading) -> Dict[int, str]:
    """Objects numbered left to right as seen from the robot, ties by name then id."""
    rx, ry = heading.right
    kids = graph.children(platform_id)

    def key(o):
        cx, cy = graph.footprint(o).center
        return (round(cx * rx + cy * ry, 9), graph.objects[o].name, o)

    return {i: o for i, o in enumerate(sorted(kids, key=key), start=1)}


def _refresh(state: EpisodeState) -> None:
    state.shown = {}
    if state.platform is None:
        state.index_map = {}
        return
    state.index_map = index_objects(state.graph, state.platform, state.heading)


def _pickable(graph: SceneGraph, oid: str) -> bool:
    return not any(graph.children(p.platform_id) for p in graph.platforms_of(oid))


def _anchor_regions(state: EpisodeState) -> Dict[str, Dict[int, object]]:
    fps = {o: state.graph.footprint(o) for o in state.graph.children(state.platform)}
    return refined_compass_regions(state.graph.platforms[state.platform].rect, fps)


def _shown_for(state: EpisodeState, oid: str, regions) -> List[ShownReceptacle]:
    heading = state.heading
    out = [
        ShownReceptacle(Direction.from_compass(c, heading).value, Direction.from_compass(c, heading), c, r)
        for c, r in regions.get(oid, {}).items()
    ]
    return sorted(out, key=lambda s: s.index)


def _grid(state: EpisodeState):
    regs = grid_regions(state.graph.platforms[state.platform].rect)
    heading = state.heading
    return [
        (i, d, regs[None if d is None else d.compass(heading)]) for i, d in enumerate(GRID_LAYOUT, start=1)
    ]


def available_actions(state: EpisodeState) -> List[List[str]]:
    """Advertised action strings, grouped the way observations list them."""
    groups: List[List[str]] = []
    groups.append([f"go_to_{p}" for p in state.graph.navigable_platforms()])
    if state.platform is not None:
        objs = state.index_map
        if state.held is None:
            picks = [f"pick_object_{i}_of_current_platform" for i, o in objs.items() if _pickable(state.graph, o)]
            if picks:
                groups.append(picks)
        if objs:
            groups.append([f"show_receptacle_of_object_{i}_of_current_platform" for i in objs])
        if state.held is not None:
            groups.append(["place_r"])
            if not objs:
                groups.append([f"place_s_[{i}]" for i, _, _ in _grid(state)])
            else:
                pairs = [f"place_s_[({i},{r.index})]" for i in sorted(state.shown) for r in state.shown[i]]
                if pairs:
                    groups.append(pairs)
        groups.append(["change_view"])
    groups.append(["CALL_END"])
    return groups


# ---------------------------------------------------------------------------
# transitions


def _invalid(reason: Optional[str] = None) -> Tuple[bool, str, dict]:
    return False, NOTICE_INVALID if reason is None else f"{NOTICE_INVALID} ({reason})", {}


def _do_goto(state: EpisodeState, cmd: GoTo):
    if cmd.platform_id not in state.graph.navigable_platforms():
        return _invalid("unknown or unreachable platform")
    ground = state.graph.ground_owner(cmd.platform_id)
    spaces = state.graph.walkable[ground]
    px, py = state.position

    def dist(i):
        sx, sy = spaces[i].position
        return (sx - px) ** 2 + (sy - py) ** 2

    best = min(range(len(spaces)), key=lambda i: (round(dist(i), 9), i))
    state.ground, state.space, state.platform = ground, best, cmd.platform_id
    _refresh(state)
    return True, None, {"moved": {"platform": cmd.platform_id, "side": spaces[best].side}}


def _do_change_view(state: EpisodeState, cmd: ChangeView):
    if state.platform is None:
        return _invalid("you are not at a platform")
    n = len(state.graph.walkable[state.ground])
    if n <= 1:
        return True, NOTICE_NO_ROTATE, {}
    state.space = (state.space + 1) % n
    _refresh(state)
    return True, None, {"view": state.graph.walkable[state.ground][state.space].side}


def _do_pick(state: EpisodeState, cmd: Pick):
    if state.platform is None:
        return _invalid("you are not at a platform")
    if state.held is not None:
        return _invalid("your gripper is not empty")
    oid = state.index_map.get(cmd.index)
    if oid is None:
        return _invalid("no such object")
    if not _pickable(state.graph, oid):
        return _invalid("something rests on that object")
    state.graph.pick(oid)
    state.held = oid
    _refresh(state)
    return True, None, {"picked": oid}


def _do_show(state: EpisodeState, cmd: ShowReceptacle):
    if state.platform is None:
        return _invalid("you are not at a platform")
    oid = state.index_map.get(cmd.index)
    if oid is None:
        return _invalid("no such object")
    state.shown[cmd.index] = _shown_for(state, oid, _anchor_regions(state))
    return True, None, {"shown": oid}


def _place(state: EpisodeState, placement, fallback: bool) -> Tuple[bool, str, dict]:
    oid = state.held
    fp = placement.footprint
    state.graph.place(oid, state.platform, fp)
    state.held = None
    _refresh(state)
    notice = NOTICE_PLACED if not fallback else f"{NOTICE_FALLBACK} {NOTICE_PLACED}"
    delta = {"placed": {"object": oid, "platform": state.platform, "rect": fp.as_list(), "fallback": fallback}}
    return True, notice, delta


def _fits_height(state: EpisodeState) -> bool:
    return state.graph.objects[state.held].height <= state.graph.platforms[state.platform].clearance + 1e-9


def _do_place_r(state: EpisodeState, cmd: PlaceR):
    if state.platform is None or state.held is None:
        return _invalid("you must hold an object at a platform")
    fp = Footprint.of(state.graph.footprint(state.held))
    if state.index_map:
        regions = _anchor_regions(state)
        rects = []
        for oid in sorted(regions):
            for c in sorted(regions[oid]):
                rects.append(regions[oid][c])
    else:
        rects = [r for _, _, r in _grid(state)]
    options = []
    if _fits_height(state):
        for r in rects:
            pl = find_placement(fp, Region.of([r]))
            if pl is not None:
                options.append(pl)
    if not options:
        return True, NOTICE_NO_SPACE, {"place_failed": True}
    return _place(state, options[state.rng.randrange(len(options))], False)


def _do_place_s(state: EpisodeState, cmd: PlaceS):
    if state.platform is None or state.held is None:
        return _invalid("you must hold an object at a platform")
    sel = cmd.selection
    pairs = isinstance(sel[0], tuple)
    if any(isinstance(s, tuple) != pairs for s in sel):
        return _invalid("mixed selection")
    if not state.index_map:
        if pairs:
            return _invalid("this platform is empty; select grid regions 1 to 9")
        grid = {i: r for i, _, r in _grid(state)}
        if any(i not in grid for i in sel):
            return _invalid("grid regions are numbered 1 to 9")
        rects = [grid[i] for i in dict.fromkeys(sel)]
    else:
        if not pairs:
            return _invalid("this platform is occupied; select (object, receptacle) pairs")
        rects = []
        for i, j in dict.fromkeys(sel):
            shown = {r.index: r for r in state.shown.get(i, [])}
            if j not in shown:
                return _invalid(f"receptacle ({i},{j}) has not been shown")
            rects.append(shown[j].rect)
    if not is_connected(rects):
        return _invalid("the selected receptacles are not connected")
    if not _fits_height(state):
        return True, NOTICE_NO_SPACE, {"place_failed": True}
    fp = Footprint.of(state.graph.footprint(state.held))
    region = Region.of(rects)
    pl = find_placement(fp, region, must_overlap=rects)
    if pl is not None:
        return _place(state, pl, False)
    pl = find_placement(fp, region)
    if pl is not None:
        return _place(state, pl, True)
    return True, NOTICE_NO_SPACE, {"place_failed": True}


_HANDLERS = {
    GoTo: _do_goto,
    ChangeView: _do_change_view,
    Pick: _do_pick,
    ShowReceptacle: _do_show,
    PlaceR: _do_place_r,
    PlaceS: _do_place_s,
}


def step(state: EpisodeState, action: Union[str, ActionCommand]) -> Tuple[str, str]:
    """Apply one action; every call consumes a step."""
    if state.terminated:
        raise RuntimeError("episode already ended")
    raw = action if isinstance(action, str) else format_action(action)
    state.steps += 1
    cmd: Optional[ActionCommand] = None
    try:
        cmd = parse_action(action, strict=state.strict) if isinstance(action, str) else action
    except ParseError:
        accepted, notice, delta = False, NOTICE_INVALID, {}
    else:
        if isinstance(cmd, CallEnd):
            accepted, notice, delta = True, None, {}
            state.terminated = True
        else:
            accepted, notice, delta = _HANDLERS[type(cmd)](state, cmd)
    if state.steps >= state.limit:
        state.terminated = True
    state.notice = notice
    state.trace.append(
        {
            "step": state.steps,
            "action_raw": raw,
            "action": action_to_dict(cmd) if cmd is not None else None,
            "accepted": accepted,
            "notice": notice,
            "location": state.location,
            "held": state.held,
            "state_delta": delta,
        }
    )
    obs = render_observation(state)
    state.observations.append(obs)
    return obs, ENDED if state.terminated else RUNNING


# ---------------------------------------------------------------------------
# observations


def _fmt_size(rect) -> str:
    return f"{rect.width:.2f}×{rect.depth:.2f} m"


def _intro_lines(state: EpisodeState) -> List[str]:
    g = state.initial
    lines = []
    for a in state.task.steps:
        parts = [f"{g.objects[a.object].name} is on {g.parent[a.object]}"]
        anchors = list(a.goal.anchors)
        if anchors:
            where = g.parent[anchors[0]]
            text = f"{g.objects[anchors[0]].name} is on {where}"
            for b in anchors[1:]:
                if g.parent[b] == where:
                    text += f", together with {g.objects[b].name}"
                else:
                    text += f", and {g.objects[b].name} is on {g.parent[b]}"
            parts.append(text)
        lines.append("Initially, " + ", and ".join(parts) + ".")
    amb = state.task.ambiguity
    if amb:
        cat = amb["object"].split("_", 1)[0]
        lines.append(
            f"Note: {amb['platform']} holds several objects of category {cat}. "
            f"The one you need is {amb['object']}."
        )
    return lines


def render_observation(state: EpisodeState, intro: bool = False) -> str:
    g = state.graph
    lines = ["Current task:", state.task.instruction, ""]
    if intro:
        lines += _intro_lines(state) + [""]
    if state.notice:
        lines += [state.notice, ""]
    if state.platform is None:
        lines.append("You are at the starting position.")
    else:
        n = len(g.walkable[state.ground])
        lines.append(f"You are currently at {state.platform} (view {state.space + 1}/{n}).")
    held = g.objects[state.held].name if state.held else "nothing"
    lines.append(f"And you are holding {held}.")
    if state.platform is not None:
        if state.index_map:
            lines.append("Objects on this platform (numbered left to right):")
            for i, oid in state.index_map.items():
                lines.append(f"object_{i}: {display_name(g, oid, state.platform)}")
        else:
            lines.append("This platform is empty. Its regions (numbered from the far-left corner):")
            for i, d, r in _grid(state):
                lines.append(f"({i}) {d.label if d else 'center'} {_fmt_size(r)}")
        for i in sorted(state.shown):
            lines.append(f"Receptacles of object_{i}:")
            for r in state.shown[i]:
                lines.append(f"({i},{r.index}) {r.direction.label} {_fmt_size(r.rect)}")
    lines.append("")
    lines.append(f"Steps used: {state.steps}/{state.limit}.")
    if not state.terminated:
        lines.append("Available actions:")
        for group in available_actions(state):
            for a in group:
                lines.append(f"- {a}")
    else:
        lines.append("The episode has ended.")
    return "\n".join(lines)


def trace_jsonl(state: EpisodeState) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in state.trace)


def run_actions(task: TaskSpec, graph: SceneGraph, actions: Sequence[str], seed: int = 0, strict: bool = False) -> EpisodeState:
    """Replay a fixed action list (stops early when the episode ends)."""
    state, _ = reset(task, graph, seed, strict)
    for a in actions:
        if state.terminated:
            break
        step(state, a)
    return state
