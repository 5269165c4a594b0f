"""Level-4 outcome tasks: template binding and three-judge feasibility voting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import httpx

from .agents import EndpointConfig, first_nonempty_line
from .scene import SceneGraph
from .tasks import TaskSpec

log = logging.getLogger(__name__)

FEASIBLE = "Feasible"
PARTIAL = "PartiallyFeasible"
NOT_FEASIBLE = "NotFeasible"
_VERDICTS = {"feasible": FEASIBLE, "partially feasible": PARTIAL, "not feasible": NOT_FEASIBLE}
ENSEMBLE_SIZE = 3
FREE_AREA_FRACTION = 0.3

PLACEHOLDER_RE = re.compile(r"\[([A-Z-]+?)(\d+)\]")
_KINDS = {"PLATFORM": 1, "SUB-PLATFORM-OBJECTS": 2, "SUB-OBJECTS": 2, "SUB-PLATFORM-CATEGORY-OBJECTS": 2}


class UnboundPlaceholder(ValueError):
    pass


class TemplateError(ValueError):
    pass


class JudgeTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class OutcomeTemplate:
    id: str
    text: str

    def __post_init__(self):
        for kind, digits in self.placeholders():
            if kind not in _KINDS or len(digits) != _KINDS[kind]:
                raise TemplateError(f"malformed placeholder [{kind}{digits}] in template {self.id}")
        if re.search(r"\[[^\]]*$|^[^\[]*\]", self.text):
            raise TemplateError(f"unbalanced brackets in template {self.id}")

    def placeholders(self) -> List[Tuple[str, str]]:
        return [(m.group(1), m.group(2)) for m in PLACEHOLDER_RE.finditer(self.text)]

    @property
    def platform_slots(self) -> List[int]:
        return sorted({int(d[0]) for _, d in self.placeholders()})

    @property
    def needs_category(self) -> bool:
        return any(k == "SUB-PLATFORM-CATEGORY-OBJECTS" for k, _ in self.placeholders())

    @property
    def allows_empty(self) -> bool:
        # arrangement-style templates can start from an empty surface
        kinds = {k for k, _ in self.placeholders()}
        return kinds == {"PLATFORM"} and "arrangement" in self.text.lower()


def load_templates(path=None) -> List[OutcomeTemplate]:
    if path is None:
        text = resources.files("rearrangekit").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return [OutcomeTemplate(d["id"], d["text"]) for d in json.loads(text)]


def _category_groups(graph: SceneGraph, pid: str) -> Dict[str, List[str]]:
    groups: Dict[str, List[str]] = {}
    for oid in graph.children(pid):
        groups.setdefault(graph.objects[oid].category, []).append(oid)
    return {c: sorted(v) for c, v in groups.items() if len(v) >= 2}


def _names(graph: SceneGraph, oids: Sequence[str]) -> str:
    return ", ".join(graph.objects[o].name for o in oids)


def bind_template(template: OutcomeTemplate, graph: SceneGraph, rng: random.Random) -> Tuple[str, dict]:
    slots = template.platform_slots
    candidates = [
        pid for pid in graph.navigable_platforms() if template.allows_empty or graph.children(pid)
    ]
    if template.needs_category:
        candidates = [pid for pid in candidates if _category_groups(graph, pid)]
    if not slots or max(slots) >= len(candidates) or len(slots) != max(slots) + 1:
        raise UnboundPlaceholder(f"template {template.id} cannot be bound in scene {graph.name}")
    chosen = rng.sample(candidates, len(slots))
    bindings: dict = {}
    for k, pid in zip(slots, chosen):
        bindings[f"PLATFORM{k}"] = pid
        children = graph.children(pid)
        bindings[f"objects{k}"] = children
        groups = _category_groups(graph, pid)
        if groups:
            cat = rng.choice(sorted(groups))
            bindings[f"category{k}"] = {"category": cat, "objects": groups[cat]}

    def sub(m: re.Match) -> str:
        kind, digits = m.group(1), m.group(2)
        k = int(digits[0])
        if kind == "PLATFORM":
            return bindings[f"PLATFORM{k}"]
        if kind == "SUB-PLATFORM-CATEGORY-OBJECTS":
            return _names(graph, bindings[f"category{k}"]["objects"])
        return _names(graph, bindings[f"objects{k}"])

    return PLACEHOLDER_RE.sub(sub, template.text), bindings


def instantiate_outcome_templates(
    templates: Sequence[OutcomeTemplate], graph: SceneGraph, seed: int = 0, count: Optional[int] = None
) -> List[TaskSpec]:
    """Bind templates round-robin until ``count`` distinct tasks exist or attempts run out.

    Raises UnboundPlaceholder when no template can be bound at all.
    """
    rng = random.Random(seed)
    count = len(templates) if count is None else count
    tasks: List[TaskSpec] = []
    seen = set()
    bindable = []
    for t in templates:
        try:
            bind_template(t, graph, random.Random(0))
            bindable.append(t)
        except UnboundPlaceholder:
            log.info("template %s has no binding in %s", t.id, graph.name)
    if not bindable:
        raise UnboundPlaceholder(f"no template can be bound in scene {graph.name}")
    attempts = 0
    while len(tasks) < count and attempts < 20 * max(count, 1):
        t = bindable[attempts % len(bindable)]
        attempts += 1
        text, bindings = bind_template(t, graph, rng)
        if text in seen:
            continue
        seen.add(text)
        digest = hashlib.sha1(f"{t.id}|{text}".encode()).hexdigest()[:10]
        tasks.append(
            TaskSpec(
                task_id=f"{graph.name}-L4-{digest}",
                level=4,
                instruction=text,
                template_id=t.id,
                bindings=bindings,
                scene=graph.name,
            )
        )
    return tasks


# ---------------------------------------------------------------------------
# voting


@dataclass(frozen=True)
class FeasibilityVote:
    judge: str
    verdict: str


def parse_verdict(reply: Optional[str]) -> Optional[str]:
    """Map a single-line reply to a verdict; None when it is not one of the three strings."""
    if reply is None:
        return None
    lines = [ln.strip() for ln in reply.strip().splitlines() if ln.strip()]
    if len(lines) != 1:
        return None
    return _VERDICTS.get(lines[0].strip("'\"").rstrip(".").strip().lower())


def platform_inventory(graph: SceneGraph, bindings: dict) -> str:
    lines = []
    for key in sorted(k for k in bindings if k.startswith("PLATFORM")):
        pid = bindings[key]
        p = graph.platforms[pid]
        lines.append(f"{pid}: {p.rect.width:.2f} x {p.rect.depth:.2f} m, {p.clearance:.2f} m of headroom")
        for oid in graph.children(pid):
            fp = graph.footprint(oid)
            o = graph.objects[oid]
            lines.append(f"  - {o.name}: {fp.width:.2f} x {fp.depth:.2f} x {o.height:.2f} m")
        if not graph.children(pid):
            lines.append("  (empty)")
    return "\n".join(lines)


def assessment_prompt(task: TaskSpec, graph: SceneGraph) -> str:
    return (
        "A household robot can pick up one object at a time and set it down somewhere on a surface. "
        "It cannot stack, open, or deform objects.\n"
        f"Proposed instruction: {task.instruction}\n"
        "Surfaces involved and what is on them:\n"
        f"{platform_inventory(graph, task.bindings or {})}\n"
        "Judge whether the robot can carry out the instruction with those objects on those surfaces. "
        "Reply with one line and nothing else: Feasible, Partially feasible, or Not feasible."
    )


Judge = Callable[[TaskSpec, str], str]


def _free_fraction(graph: SceneGraph, pid: str) -> float:
    rect = graph.platforms[pid].rect
    used = 0.0
    for oid in graph.children(pid):
        inter = rect.intersection(graph.footprint(oid))
        if inter is not None:
            used += inter.area
    return max(0.0, 1.0 - used / rect.area)


class HeuristicJudge:
    """Offline judge: every platform is bound, hosts a movable object, and keeps 30% free area."""

    def __init__(self, graph: SceneGraph, name: str = "heuristic"):
        self.graph = graph
        self.name = name

    def __call__(self, task: TaskSpec, prompt: str) -> str:
        bindings = task.bindings or {}
        if PLACEHOLDER_RE.search(task.instruction):
            return "Not feasible"
        pids = [v for k, v in bindings.items() if k.startswith("PLATFORM")]
        if not pids:
            return "Not feasible"
        movable = set(self.graph.movable_objects())
        for pid in pids:
            if pid not in self.graph.platforms:
                return "Not feasible"
            if not movable.intersection(self.graph.children(pid)):
                return "Not feasible"
            if _free_fraction(self.graph, pid) < FREE_AREA_FRACTION:
                return "Not feasible"
        return "Feasible"


class RemoteJudge:
    """Chat-completions judge; transport failures surface as JudgeTimeout."""

    def __init__(self, config: EndpointConfig, name: Optional[str] = None, client: Optional[httpx.Client] = None):
        self.config = config
        self.name = name or config.model
        self.client = client

    def __call__(self, task: TaskSpec, prompt: str) -> str:
        token = os.environ.get(self.config.api_key_env) if self.config.api_key_env else None
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        body = {"model": self.config.model, "messages": [{"role": "user", "content": prompt}]}
        own = self.client is None
        client = self.client or httpx.Client(timeout=self.config.timeout_s, follow_redirects=False)
        try:
            for _ in range(self.config.max_retries + 1):
                try:
                    resp = client.post(self.config.url, json=body, headers=headers, timeout=self.config.timeout_s)
                except (httpx.TimeoutException, httpx.TransportError):
                    continue
                if resp.status_code >= 500:
                    continue
                try:
                    return first_nonempty_line(resp.json()["choices"][0]["message"]["content"] or "")
                except (ValueError, KeyError, IndexError, TypeError):
                    return ""
            raise JudgeTimeout(f"judge {self.name} did not answer")
        finally:
            if own:
                client.close()


def _ask(judge: Judge, name: str, task: TaskSpec, prompt: str) -> FeasibilityVote:
    for attempt in range(2):  # one retry on an unparseable reply
        try:
            reply = judge(task, prompt)
        except JudgeTimeout as exc:
            log.warning("judge %s timed out: %s", name, exc)
            return FeasibilityVote(name, NOT_FEASIBLE)
        verdict = parse_verdict(reply)
        if verdict is not None:
            return FeasibilityVote(name, verdict)
        log.info("judge %s gave an unparseable reply (attempt %d): %r", name, attempt + 1, reply)
    return FeasibilityVote(name, NOT_FEASIBLE)


def vote_feasibility(
    task: TaskSpec, judges: Sequence[Judge], graph: Optional[SceneGraph] = None, prompt: Optional[str] = None
) -> Tuple[bool, List[FeasibilityVote]]:
    """Accepted iff at least two of the three judges answer Feasible."""
    if len(judges) != ENSEMBLE_SIZE:
        raise ValueError(f"voting needs exactly {ENSEMBLE_SIZE} judges, got {len(judges)}")
    if prompt is None:
        prompt = assessment_prompt(task, graph) if graph is not None else task.instruction
    names = [getattr(j, "name", f"judge{i}") for i, j in enumerate(judges)]
    with ThreadPoolExecutor(max_workers=ENSEMBLE_SIZE) as pool:
        votes = list(pool.map(lambda i: _ask(judges[i], names[i], task, prompt), range(ENSEMBLE_SIZE)))
    accepted = sum(v.verdict == FEASIBLE for v in votes) >= 2
    return accepted, votes


def generate_outcome_tasks(
    graph: SceneGraph,
    judges: Sequence[Judge],
    templates: Optional[Sequence[OutcomeTemplate]] = None,
    seed: int = 0,
    count: Optional[int] = None,
) -> List[Tuple[TaskSpec, List[FeasibilityVote]]]:
    templates = list(templates) if templates is not None else load_templates()
    out = []
    for task in instantiate_outcome_templates(templates, graph, seed, count):
        ok, votes = vote_feasibility(task, judges, graph)
        if ok:
            out.append((task, votes))
    return out
