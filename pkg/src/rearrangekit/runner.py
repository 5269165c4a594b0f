"""Episode and batch runners plus the episode-log format."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from .agents import Agent, AgentContext, AgentTimeout, load_preamble
from .env import EpisodeState, reset, step
from .evaluation import EpisodeResult, evaluate_episode
from .scene import SceneGraph
from .tasks import TaskSpec

AgentFactory = Callable[[TaskSpec, int], Agent]


@dataclass
class TaskSet:
    graph: SceneGraph
    tasks: List[TaskSpec] = field(default_factory=list)


@dataclass
class Episode:
    task: TaskSpec
    seed: int
    state: EpisodeState
    result: EpisodeResult

    def log_records(self) -> List[dict]:
        head = {"episode": {"task_id": self.task.task_id, "level": self.task.level, "seed": self.seed, "task": self.task.to_dict()}}
        body = [dict(rec, task_id=self.task.task_id) for rec in self.state.trace]
        return [head] + body + [{"result": self.result.to_dict()}]


def episode_seed(seed: int, index: int) -> int:
    return seed ^ index


def run_episode(
    task: TaskSpec,
    graph: SceneGraph,
    agent: Agent,
    seed: int = 0,
    strict: bool = False,
    context: Optional[AgentContext] = None,
) -> Episode:
    context = context if context is not None else AgentContext(preamble=load_preamble())
    state, obs = reset(task, graph, seed, strict)
    while not state.terminated:
        try:
            decision = agent.act(context, obs)
            raw = decision.raw
        except AgentTimeout:
            raw = ""  # counted as an invalid action
        context.record(obs, raw)
        obs, _ = step(state, raw)
    result = evaluate_episode(task, graph, state.trace)
    return Episode(task, seed, state, result)


def run_batch(
    tasks: Sequence[TaskSpec],
    graph: SceneGraph,
    make: AgentFactory,
    seed: int = 0,
    parallel: Optional[int] = None,
    strict: bool = False,
    context_factory: Optional[Callable[[], AgentContext]] = None,
) -> List[Episode]:
    """Run every task; results come back in task order whatever the schedule."""
    workers = parallel or os.cpu_count() or 1
    new_context = context_factory or (lambda: AgentContext(preamble=load_preamble()))

    def one(i: int) -> Episode:
        s = episode_seed(seed, i)
        return run_episode(tasks[i], graph, make(tasks[i], s), s, strict, new_context())

    if workers <= 1:
        return [one(i) for i in range(len(tasks))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(tasks))))


def write_episode_log(episodes: Iterable[Episode], path, provenance: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for ep in episodes:
            for rec in ep.log_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_episode_log(path) -> List[Tuple[dict, List[dict], Optional[dict]]]:
    """(episode header, step records, logged result) per episode."""
    out = []
    cur = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "provenance" in rec:
                continue
            if "episode" in rec:
                cur = [rec["episode"], [], None]
                out.append(cur)
            elif "result" in rec:
                cur[2] = rec["result"]
            else:
                cur[1].append(rec)
    return [tuple(x) for x in out]
