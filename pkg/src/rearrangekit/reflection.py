"""Rule-based episode summaries, long-term memory, and the trial/test loop."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

from .agents import Agent, AgentContext, Unsolvable, load_preamble, oracle_segments
from .evaluation import STAGES, BenchmarkReport, EpisodeResult, aggregate
from .runner import TaskSet, episode_seed, run_episode
from .scene import SceneGraph
from .tasks import TaskSpec

DEFAULT_CAPACITY = 10
_STAGE_TEXT = {
    "nav_to_source": "navigate to the platform holding the target object",
    "picked_correct": "pick up the target object",
    "nav_to_dest_holding": "navigate to the destination platform while holding the object",
    "placed_correct": "place the object so that the goal holds",
}


@dataclass
class ReflectionEntry:
    goal: str
    actions: List[str]
    success: bool
    achieved: List[List[str]]  # per sub-task, stages reached in order
    achieved_until: Optional[int]  # trace position of the last achieved stage
    first_unachieved: Optional[dict]  # {"subtask", "stage", "strategy"}
    suggestions: List[str]
    snapshot: str = ""
    order: int = 0

    def render(self) -> str:
        lines = [f"Task: {self.goal}"]
        lines.append("Actions: " + (", ".join(self.actions) if self.actions else "(none)"))
        if self.success:
            lines.append("Outcome: success.")
            return "\n".join(lines)
        done = [f"sub-task {k + 1}: {', '.join(st) if st else 'nothing'}" for k, st in enumerate(self.achieved)]
        lines.append("Outcome: failure. Achieved " + "; ".join(done) + ".")
        if self.achieved_until is not None:
            lines.append(f"Progress was correct up to action {self.achieved_until + 1}.")
        if self.first_unachieved:
            fu = self.first_unachieved
            lines.append(f"First missed step (sub-task {fu['subtask'] + 1}): {_STAGE_TEXT[fu['stage']]}.")
        if self.suggestions:
            lines.append("Next time try: " + ", ".join(self.suggestions))
        if self.snapshot:
            lines.append("State at that point:")
            lines.append(self.snapshot)
        return "\n".join(lines)


def summarize_episode(
    task: TaskSpec,
    result: EpisodeResult,
    trace: Sequence[dict],
    graph: SceneGraph,
    observations: Sequence[str] = (),
    order: int = 0,
) -> ReflectionEntry:
    achieved = [[s for s in STAGES if flags[s]] for flags in result.flags]
    positions = [p for at in result.stage_at for p in at.values() if p is not None]
    until = max(positions) if positions else None
    first = None
    suggestions: List[str] = []
    if not result.success:
        for k, flags in enumerate(result.flags):
            missing = [s for s in STAGES if not flags[s]]
            if missing:
                first = {"subtask": k, "stage": missing[0], "strategy": task.steps[k].goal.strategy.value}
                break
        if first is not None:
            suggestions = _suggest(task, graph, first)
    snapshot = ""
    if observations:
        idx = 0 if until is None else min(until + 1, len(observations) - 1)
        snapshot = _state_lines(observations[idx])
    return ReflectionEntry(
        goal=task.instruction,
        actions=[rec["action_raw"] for rec in trace],
        success=result.success,
        achieved=achieved,
        achieved_until=until,
        first_unachieved=first,
        suggestions=suggestions,
        snapshot=snapshot,
        order=order,
    )


def _suggest(task: TaskSpec, graph: SceneGraph, first: dict) -> List[str]:
    try:
        segments = oracle_segments(task, graph)
    except Unsolvable:
        return []
    seg = segments[first["subtask"]]
    start = STAGES.index(first["stage"])
    for stage in STAGES[start:]:
        if seg[stage]:
            return list(seg[stage])
    return []


def _state_lines(observation: str) -> str:
    keep = []
    for line in observation.splitlines():
        if line.startswith(("You are", "And you are holding", "object_", "Steps used")):
            keep.append(line)
    return "\n".join(keep)


class LongTermMemory:
    def __init__(self, capacity: int = DEFAULT_CAPACITY, entries: Sequence[ReflectionEntry] = ()):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._entries = deque(entries, maxlen=capacity)
        self._counter = max((e.order for e in self._entries), default=-1) + 1

    def add(self, entry: ReflectionEntry) -> None:
        entry.order = self._counter
        self._counter += 1
        self._entries.append(entry)

    @property
    def entries(self) -> List[ReflectionEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def snapshot(self) -> "LongTermMemory":
        return LongTermMemory(self.capacity, [ReflectionEntry(**asdict(e)) for e in self._entries])

    def render(self) -> str:
        if not self._entries:
            return ""
        parts = ["Lessons from earlier episodes (most recent first):"]
        for e in reversed(self._entries):
            parts.append(f"[{e.order + 1}]\n{e.render()}")
        return "\n\n".join(parts)

    def to_json(self) -> str:
        return json.dumps({"capacity": self.capacity, "entries": [asdict(e) for e in self._entries]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "LongTermMemory":
        data = json.loads(text)
        if isinstance(data, list):
            data = {"capacity": DEFAULT_CAPACITY, "entries": data}
        return cls(data.get("capacity", DEFAULT_CAPACITY), [ReflectionEntry(**e) for e in data["entries"]])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LongTermMemory":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# agent factory: (task, graph, seed, memory entries) -> agent
ReflectiveFactory = Callable[[TaskSpec, SceneGraph, int, Sequence[ReflectionEntry]], Agent]


def _context(memory: LongTermMemory) -> AgentContext:
    return AgentContext(preamble=load_preamble(), memory=memory.render() or None, memory_entries=memory.entries)


def evaluate_with_memory(test: TaskSet, agent: ReflectiveFactory, memory: LongTermMemory, seed: int = 0) -> BenchmarkReport:
    frozen = memory.snapshot()
    results = []
    for i, task in enumerate(test.tasks):
        s = episode_seed(seed, i)
        ep = run_episode(task, test.graph, agent(task, test.graph, s, frozen.entries), s, context=_context(frozen))
        results.append(ep.result)
    return aggregate(results)


def run_trials(train: TaskSet, agent: ReflectiveFactory, trials: int, memory: LongTermMemory, seed: int = 0) -> None:
    """Sequential trial episodes, each followed by a memory update."""
    for t in range(trials):
        task = train.tasks[t % len(train.tasks)]
        s = episode_seed(seed, t)
        ep = run_episode(task, train.graph, agent(task, train.graph, s, memory.entries), s, context=_context(memory))
        memory.add(summarize_episode(task, ep.result, ep.state.trace, train.graph, ep.state.observations))


def run_reflection_loop(
    train: TaskSet,
    test: TaskSet,
    agent: ReflectiveFactory,
    trials: int,
    memory: Optional[LongTermMemory] = None,
    seed: int = 0,
) -> Tuple[BenchmarkReport, BenchmarkReport]:
    memory = memory if memory is not None else LongTermMemory()
    before = evaluate_with_memory(test, agent, memory, seed)
    if trials <= 0:
        return before, before
    run_trials(train, agent, trials, memory, seed)
    after = evaluate_with_memory(test, agent, memory, seed)
    return before, after
