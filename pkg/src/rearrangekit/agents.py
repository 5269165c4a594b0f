"""Agents: the decision contract and the built-in baselines."""

from __future__ import annotations

import logging
import os
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Protocol, Sequence, Tuple
from urllib.parse import urlsplit

import httpx

from .env import ActionCommand, ParseError, parse_action, reset, step
from .goals import plan_selection
from .receptacles import GRID_INDEX, Direction
from .scene import SceneGraph
from .tasks import TaskSpec

log = logging.getLogger(__name__)


class AgentTimeout(RuntimeError):
    pass


class Unsolvable(RuntimeError):
    pass


def load_preamble() -> str:
    return resources.files("rearrangekit").joinpath("data/system_prompt.txt").read_text(encoding="utf-8")


@dataclass
class AgentContext:
    preamble: str = ""
    memory: Optional[str] = None
    memory_entries: list = field(default_factory=list)  # structured ReflectionEntry records
    history: List[Tuple[str, str]] = field(default_factory=list)  # (observation, action)

    def record(self, observation: str, action: str) -> None:
        self.history.append((observation, action))


@dataclass
class AgentDecision:
    raw: str
    command: Optional[ActionCommand] = None
    error: Optional[str] = None

    @classmethod
    def from_text(cls, raw: str, strict: bool = False) -> "AgentDecision":
        try:
            return cls(raw, parse_action(raw, strict=strict))
        except ParseError as exc:
            return cls(raw, None, str(exc))


class Agent(Protocol):
    def act(self, context: AgentContext, observation: str) -> AgentDecision: ...


# ---------------------------------------------------------------------------
# random baseline


_GROUP = re.compile(r"^(go_to_|pick_|show_|place_r$|place_s_|change_view$|CALL_END$)")


def advertised_actions(observation: str) -> List[str]:
    lines = observation.splitlines()
    try:
        start = lines.index("Available actions:") + 1
    except ValueError:
        return []
    out = []
    for line in lines[start:]:
        if not line.startswith("- "):
            break
        out.append(line[2:])
    return out


def group_actions(actions: Sequence[str]) -> List[List[str]]:
    groups: Dict[str, List[str]] = {}
    for a in actions:
        m = _GROUP.match(a)
        groups.setdefault(m.group(1) if m else a, []).append(a)
    return list(groups.values())


class RandomAgent:
    """Uniform over advertised action kinds, then uniform within the kind."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def act(self, context: AgentContext, observation: str) -> AgentDecision:
        groups = group_actions(advertised_actions(observation))
        if not groups:
            return AgentDecision.from_text("CALL_END")
        group = groups[self.rng.randrange(len(groups))]
        return AgentDecision.from_text(group[self.rng.randrange(len(group))])


# ---------------------------------------------------------------------------
# oracle


def _run(state, text: str, out: List[str]) -> None:
    out.append(text)
    step(state, text)


def oracle_segments(task: TaskSpec, graph: SceneGraph) -> List[Dict[str, List[str]]]:
    """Per sub-task, the canonical actions that achieve each scoring stage."""
    state, _ = reset(task, graph, seed=0)
    segments = []
    for action in task.steps:
        seg: Dict[str, List[str]] = {}
        obj = action.object
        src = state.graph.parent[obj]
        seg["nav_to_source"] = []
        if state.platform != src:
            _run(state, f"go_to_{src}", seg["nav_to_source"])
        idx = {o: i for i, o in state.index_map.items()}[obj]
        seg["picked_correct"] = []
        _run(state, f"pick_object_{idx}_of_current_platform", seg["picked_correct"])
        planned = plan_selection(state.graph, obj, action.goal)
        if planned is None:
            raise Unsolvable(f"{task.task_id}: no placement for {obj}")
        seg["nav_to_dest_holding"] = []
        if state.platform != planned.platform:
            _run(state, f"go_to_{planned.platform}", seg["nav_to_dest_holding"])
        seg["placed_correct"] = []
        heading = state.heading
        if planned.selection[0].anchor is None:
            cells = []
            for it in planned.selection:
                d = None if it.compass is None else Direction.from_compass(it.compass, heading)
                cells.append(str(GRID_INDEX[d]))
            _run(state, f"place_s_[{','.join(cells)}]", seg["placed_correct"])
        else:
            where = {o: i for i, o in state.index_map.items()}
            pairs = []
            for anchor in dict.fromkeys(it.anchor for it in planned.selection):
                _run(state, f"show_receptacle_of_object_{where[anchor]}_of_current_platform", seg["placed_correct"])
            for it in planned.selection:
                pairs.append(f"({where[it.anchor]},{Direction.from_compass(it.compass, heading).value})")
            _run(state, f"place_s_[{','.join(pairs)}]", seg["placed_correct"])
        placed = state.trace[-1]["state_delta"].get("placed")
        if not placed or placed["fallback"]:
            raise Unsolvable(f"{task.task_id}: planned placement was rejected")
        segments.append(seg)
    return segments


def oracle_plan(task: TaskSpec, graph: SceneGraph) -> List[str]:
    plan = []
    for seg in oracle_segments(task, graph):
        for stage in ("nav_to_source", "picked_correct", "nav_to_dest_holding", "placed_correct"):
            plan += seg[stage]
    plan.append("CALL_END")
    if len(plan) > task.step_limit:
        raise Unsolvable(f"{task.task_id}: plan longer than the step limit")
    return plan


class ScriptAgent:
    """Plays back a fixed list of action strings, then ends."""

    def __init__(self, actions: Sequence[str]):
        self.actions = list(actions)
        self.pos = 0

    def act(self, context: AgentContext, observation: str) -> AgentDecision:
        text = self.actions[self.pos] if self.pos < len(self.actions) else "CALL_END"
        self.pos += 1
        return AgentDecision.from_text(text)


class OracleAgent(ScriptAgent):
    """Ground-truth agent: resolves ambiguous targets and plans exact placements."""

    def __init__(self, task: TaskSpec, graph: SceneGraph):
        super().__init__(oracle_plan(task, graph))


# ---------------------------------------------------------------------------
# memory-following scripted agent


class MemoryFollowingAgent(ScriptAgent):
    """Starts from a naive routine and adopts fixes suggested by reflection memory.

    Without lessons it picks the target and drops it with ``place_r`` where it
    stands. A remembered failure at the destination-navigation stage teaches it
    to walk to the goal platform first; a remembered placement failure for a
    placement strategy teaches it to use receptacle selection for that strategy.
    """

    def __init__(self, task: TaskSpec, graph: SceneGraph, memory_entries: Sequence = ()):
        nav, precise = learned_lessons(memory_entries)
        segments = oracle_segments(task, graph)
        actions: List[str] = []
        for action, seg in zip(task.steps, segments):
            strategy = action.goal.strategy.value
            actions += seg["nav_to_source"] + seg["picked_correct"]
            if strategy in precise:
                actions += seg["nav_to_dest_holding"] + seg["placed_correct"]
            elif nav:
                actions += seg["nav_to_dest_holding"] + ["place_r"]
            else:
                actions += ["place_r"]
        super().__init__(actions + ["CALL_END"])


def learned_lessons(entries: Sequence) -> Tuple[bool, set]:
    nav = False
    precise = set()
    for e in entries:
        if e.success or e.first_unachieved is None:
            continue
        stage = e.first_unachieved["stage"]
        if stage == "nav_to_dest_holding":
            nav = True
        elif stage == "placed_correct":
            nav = True
            precise.add(e.first_unachieved["strategy"])
    return nav, precise


# ---------------------------------------------------------------------------
# external chat-completions agent


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    timeout_s: float = 60.0
    api_key_env: Optional[str] = None
    max_retries: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "EndpointConfig":
        return cls(
            base_url=d["base_url"],
            model=d["model"],
            timeout_s=float(d.get("timeout_s", 60.0)),
            api_key_env=d.get("api_key_env"),
            max_retries=int(d.get("max_retries", 1)),
        )

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def build_messages(context: AgentContext, observation: str) -> List[dict]:
    system = context.preamble
    if context.memory:
        system = f"{system}\n\n{context.memory}" if system else context.memory
    messages = [{"role": "system", "content": system}]
    for obs, act in context.history:
        messages.append({"role": "user", "content": obs})
        messages.append({"role": "assistant", "content": act})
    messages.append({"role": "user", "content": observation})
    return messages


def _redact(text: str, secret: Optional[str]) -> str:
    return text.replace(secret, "***") if secret else text


def first_nonempty_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


def external_request(
    config: EndpointConfig,
    context: AgentContext,
    observation: str,
    client: Optional[httpx.Client] = None,
) -> str:
    """POST one chat-completions request; retries on timeouts, transport errors and 5xx."""
    token = os.environ.get(config.api_key_env) if config.api_key_env else None
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {"model": config.model, "messages": build_messages(context, observation)}
    host = urlsplit(config.url).netloc
    own = client is None
    client = client or httpx.Client(timeout=config.timeout_s, follow_redirects=False)
    try:
        last_error = "no attempt made"
        for attempt in range(config.max_retries + 1):
            try:
                resp = client.post(config.url, json=body, headers=headers, timeout=config.timeout_s)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = f"{type(exc).__name__}: {_redact(str(exc), token)}"
                log.warning("request to %s failed (attempt %d): %s", host, attempt + 1, last_error)
                continue
            if resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("request to %s returned %s (attempt %d)", host, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise AgentTimeout(f"endpoint rejected the request: HTTP {resp.status_code}")
            try:
                content = resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise AgentTimeout(f"malformed completion payload: {exc}") from None
            return first_nonempty_line(content)
        raise AgentTimeout(f"endpoint unavailable after {config.max_retries + 1} attempts ({last_error})")
    finally:
        if own:
            client.close()


class ExternalAgent:
    def __init__(self, config: EndpointConfig, client: Optional[httpx.Client] = None, strict: bool = False):
        self.config = config
        self.client = client
        self.strict = strict

    def act(self, context: AgentContext, observation: str) -> AgentDecision:
        raw = external_request(self.config, context, observation, self.client)
        return AgentDecision.from_text(raw, strict=self.strict)


class HumanAgent:
    """Reads actions from a line-oriented stream (interactive play)."""

    def __init__(self, read=input, write=print):
        self.read = read
        self.write = write

    def act(self, context: AgentContext, observation: str) -> AgentDecision:
        self.write(observation)
        return AgentDecision.from_text(self.read("> "))


def make_agent(spec: dict, task: TaskSpec, graph: SceneGraph, seed: int, memory_entries: Sequence = ()) -> Agent:
    kind = spec.get("agent", "random")
    if kind == "random":
        return RandomAgent(seed)
    if kind == "oracle":
        return OracleAgent(task, graph)
    if kind == "scripted":
        return MemoryFollowingAgent(task, graph, memory_entries)
    if kind == "external":
        return ExternalAgent(EndpointConfig.from_dict(spec["endpoint"]), strict=bool(spec.get("strict", False)))
    raise ValueError(f"unknown agent kind {kind!r}")


__all__ = [
    "Agent",
    "AgentContext",
    "AgentDecision",
    "AgentTimeout",
    "EndpointConfig",
    "ExternalAgent",
    "HumanAgent",
    "MemoryFollowingAgent",
    "OracleAgent",
    "RandomAgent",
    "ScriptAgent",
    "Unsolvable",
    "advertised_actions",
    "external_request",
    "load_preamble",
    "make_agent",
    "oracle_plan",
    "oracle_segments",
]
