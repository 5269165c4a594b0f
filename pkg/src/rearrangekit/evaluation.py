"""Success judgment, intermediate points, and result aggregation.

Judging works from logged traces: each step record carries the state delta
it caused, so the final and intermediate scene states can be rebuilt from the
initial graph without re-running the environment.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .geometry import Rect
from .goals import AtomicAction, check_goal, goal_platform
from .scene import HELD, SceneError, SceneGraph
from .tasks import TaskSpec

STAGES = ("nav_to_source", "picked_correct", "nav_to_dest_holding", "placed_correct")
POINTS_PER_STAGE = 25


class ObjectMissing(SceneError):
    pass


class EmptyResults(ValueError):
    pass


# ---------------------------------------------------------------------------
# replay


def apply_delta(graph: SceneGraph, delta: dict) -> None:
    if "picked" in delta:
        graph.pick(delta["picked"])
    placed = delta.get("placed")
    if placed:
        graph.place(placed["object"], placed["platform"], Rect.from_seq(placed["rect"]))


def replay(initial: SceneGraph, trace: Sequence[dict]) -> Iterator[Tuple[int, dict, SceneGraph]]:
    """Yield (position, record, graph after the record); the graph is mutated in place."""
    graph = initial.copy()
    for pos, rec in enumerate(trace):
        apply_delta(graph, rec.get("state_delta") or {})
        yield pos, rec, graph


def final_graph(initial: SceneGraph, trace: Sequence[dict]) -> SceneGraph:
    graph = initial.copy()
    for rec in trace:
        apply_delta(graph, rec.get("state_delta") or {})
    return graph


def _platform_of(location: str) -> Optional[str]:
    return None if location in (None, "start") else location.split("@", 1)[0]


# ---------------------------------------------------------------------------
# intermediate points


@dataclass
class StageScan:
    flags: Dict[str, bool]
    at: Dict[str, Optional[int]]  # trace position where each stage was reached

    @property
    def points(self) -> int:
        return POINTS_PER_STAGE * sum(self.flags.values())

    @property
    def completed_at(self) -> Optional[int]:
        return self.at["placed_correct"]


def scan_stages(initial: SceneGraph, trace: Sequence[dict], action: AtomicAction, start: int = 0) -> StageScan:
    """Sequential stage scan for one relocation, beginning at trace position ``start``.

    The robot's platform and the scene state at ``start`` come from replaying
    the earlier records.
    """
    flags = {s: False for s in STAGES}
    at: Dict[str, Optional[int]] = {s: None for s in STAGES}
    obj = action.object
    graph = initial.copy()
    here: Optional[str] = None
    for rec in trace[:start]:
        apply_delta(graph, rec.get("state_delta") or {})
        here = _platform_of(rec.get("location"))
    if here is not None and graph.parent.get(obj) == here:
        flags["nav_to_source"], at["nav_to_source"] = True, start - 1
    for pos in range(start, len(trace)):
        rec = trace[pos]
        delta = rec.get("state_delta") or {}
        source_before = graph.parent.get(obj)
        apply_delta(graph, delta)
        here = _platform_of(rec.get("location"))
        moved = delta.get("moved")
        if not flags["nav_to_source"]:
            if moved and moved["platform"] == source_before:
                flags["nav_to_source"], at["nav_to_source"] = True, pos
            continue
        if not flags["picked_correct"]:
            if delta.get("picked") == obj:
                flags["picked_correct"], at["picked_correct"] = True, pos
                if here == goal_platform(graph, action.goal):
                    flags["nav_to_dest_holding"], at["nav_to_dest_holding"] = True, pos
            continue
        if not flags["nav_to_dest_holding"]:
            if moved and graph.parent.get(obj) == HELD and moved["platform"] == goal_platform(graph, action.goal):
                flags["nav_to_dest_holding"], at["nav_to_dest_holding"] = True, pos
            continue
        if delta.get("placed") and graph.parent.get(obj) != HELD and check_goal(graph, obj, action.goal)[0]:
            flags["placed_correct"], at["placed_correct"] = True, pos
            break
    return StageScan(flags, at)


def scan_task(task: TaskSpec, initial: SceneGraph, trace: Sequence[dict]) -> List[StageScan]:
    steps = task.steps
    if len(steps) == 1:
        return [scan_stages(initial, trace, steps[0])]
    first = scan_stages(initial, trace, steps[0])
    if task.connector == "THEN":
        done = first.completed_at
        if done is None:
            second = StageScan({s: False for s in STAGES}, {s: None for s in STAGES})
        else:
            second = scan_stages(initial, trace, steps[1], start=done + 1)
    else:
        second = scan_stages(initial, trace, steps[1])
    return [first, second]


def combine_points(task: TaskSpec, scores: Sequence[float]) -> float:
    if len(scores) == 1:
        return float(scores[0])
    if task.connector == "OR":
        return float(max(scores))
    return sum(scores) / len(scores)


def score_intermediate(task: TaskSpec, trace: Sequence[dict], initial: SceneGraph) -> Tuple[float, List[Dict[str, bool]]]:
    """(points, per-sub-task stage flags); 25 points per stage reached in order."""
    scans = scan_task(task, initial, trace)
    return combine_points(task, [s.points for s in scans]), [s.flags for s in scans]


# ---------------------------------------------------------------------------
# success


def judge_success(
    task: TaskSpec, initial: SceneGraph, final: SceneGraph, trace: Optional[Sequence[dict]] = None
) -> Tuple[bool, str]:
    for a in task.steps:
        if a.object not in final.objects:
            raise ObjectMissing(a.object)
    results = [check_goal(final, a.object, a.goal) for a in task.steps]
    if len(results) == 1:
        return results[0]
    (ok1, r1), (ok2, r2) = results
    if task.connector == "OR":
        if ok1 or ok2:
            return True, r1 if ok1 else r2
        return False, f"Sub-task 1: {r1} Sub-task 2: {r2}"
    if not ok1:
        return False, f"Sub-task 1: {r1}"
    if not ok2:
        return False, f"Sub-task 2: {r2}"
    if task.connector == "THEN" and trace is not None:
        scans = scan_task(task, initial, trace)
        if not scans[1].flags["placed_correct"]:
            return False, "Sub-task 2 was not completed after sub-task 1."
    return True, "Both sub-tasks completed."


# ---------------------------------------------------------------------------
# results


@dataclass
class EpisodeResult:
    task_id: str
    level: int
    success: bool
    intermediate_points: float
    flags: List[Dict[str, bool]]
    reason: str
    steps: int
    stage_at: List[Dict[str, Optional[int]]] = field(default_factory=list)
    trace_ref: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        return cls(**d)


def evaluate_episode(task: TaskSpec, initial: SceneGraph, trace: Sequence[dict], trace_ref: Optional[str] = None) -> EpisodeResult:
    final = final_graph(initial, trace)
    success, reason = judge_success(task, initial, final, trace)
    scans = scan_task(task, initial, trace)
    points = combine_points(task, [s.points for s in scans])
    return EpisodeResult(
        task_id=task.task_id,
        level=task.level,
        success=success,
        intermediate_points=points,
        flags=[s.flags for s in scans],
        reason=reason,
        steps=len(trace),
        stage_at=[s.at for s in scans],
        trace_ref=trace_ref,
    )


@dataclass
class ReportRow:
    level: str
    episodes: int
    mean_ip: float
    sr_percent: float


@dataclass
class BenchmarkReport:
    rows: List[ReportRow]

    def row(self, level) -> ReportRow:
        for r in self.rows:
            if r.level == str(level):
                return r
        raise KeyError(level)

    @property
    def overall(self) -> ReportRow:
        return self.row("overall")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "episodes", "mean_ip", "sr_percent"])
        for r in self.rows:
            w.writerow([r.level, r.episodes, f"{r.mean_ip:.2f}", f"{r.sr_percent:.2f}"])
        return buf.getvalue()


def _row(level: str, results: Sequence[EpisodeResult]) -> ReportRow:
    n = len(results)
    return ReportRow(
        level=level,
        episodes=n,
        mean_ip=sum(r.intermediate_points for r in results) / n,
        sr_percent=100.0 * sum(r.success for r in results) / n,
    )


def aggregate(results: Iterable[EpisodeResult]) -> BenchmarkReport:
    results = list(results)
    if not results:
        raise EmptyResults("no episode results to aggregate")
    rows = [_row(str(lv), [r for r in results if r.level == lv]) for lv in sorted({r.level for r in results})]
    rows.append(_row("overall", results))
    return BenchmarkReport(rows)


def episodes_csv(results: Iterable[EpisodeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_id", "level", "success", "ip", "steps", "reason"])
    for r in results:
        w.writerow([r.task_id, r.level, str(r.success).lower(), f"{r.intermediate_points:.2f}", r.steps, r.reason])
    return buf.getvalue()
