"""Command-line entry point: graph, gen, bench, judge, reflect, play."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from collections import Counter
from pathlib import Path
from typing import List, Optional, Sequence

from . import TOOL_NAME, __version__
from .agents import AgentContext, EndpointConfig, HumanAgent, load_preamble, make_agent
from .evaluation import aggregate, episodes_csv, evaluate_episode
from .outcome import HeuristicJudge, RemoteJudge, instantiate_outcome_templates, load_templates, vote_feasibility
from .receptacles import refine_receptacles, segment_empty_platform
from .reflection import LongTermMemory, run_reflection_loop
from .runner import TaskSet, run_batch, run_episode, read_episode_log, write_episode_log
from .scene import SceneGraph, load_scene_file, unreachable_objects
from .tasks import InsufficientActions, TaskSpec, dump_tasks, load_tasks, sample_process_tasks

log = logging.getLogger(TOOL_NAME)


class CliError(Exception):
    pass


def provenance(command: str, seed: int, graph: SceneGraph, **extra) -> dict:
    d = {"tool": TOOL_NAME, "version": __version__, "command": command, "seed": seed,
         "scene": graph.name, "scene_digest": graph.digest()}
    d.update(extra)
    return d


def csv_comment(prov: dict) -> str:
    keys = ("tool", "version", "seed", "scene", "scene_digest")
    return "# " + " ".join(f"{k}={prov[k]}" for k in keys if k in prov) + "\n"


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_scene(path: str) -> SceneGraph:
    if not Path(path).is_file():
        raise CliError(f"scene file not found: {path}")
    return load_scene_file(path)


# ---------------------------------------------------------------------------
# graph


def graph_stats(graph: SceneGraph) -> dict:
    platforms = []
    for pid in sorted(graph.platforms):
        p = graph.platforms[pid]
        children = graph.children(pid)
        entry = {"id": pid, "owner": p.owner, "size": [round(p.rect.width, 4), round(p.rect.depth, 4)],
                 "clearance": round(p.clearance, 4), "children": children}
        if pid in graph.navigable_platforms():
            if children:
                entry["receptacles"] = sum(len(v) for v in refine_receptacles(graph, pid).values())
            else:
                entry["grid_cells"] = len(segment_empty_platform(graph, pid))
        platforms.append(entry)
    return {
        "scene": graph.name,
        "scene_digest": graph.digest(),
        "objects": len(graph.objects),
        "ground_objects": len(graph.ground_objects),
        "platforms": platforms,
        "navigable_platforms": graph.navigable_platforms(),
        "movable_objects": graph.movable_objects(),
        "unreachable": unreachable_objects(graph),
        "document": graph.to_document(),
    }


def cmd_graph(args) -> int:
    graph = _load_scene(args.scene)
    _write(args.out, json.dumps(graph_stats(graph), indent=1, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# gen


def coverage(tasks: Sequence[TaskSpec]) -> dict:
    objects: Counter = Counter()
    platforms: Counter = Counter()
    for t in tasks:
        for a in t.steps:
            objects[a.object] += 1
            objects.update(a.goal.anchors)
            if a.goal.platform:
                platforms[a.goal.platform] += 1
        for key, val in (t.bindings or {}).items():
            if key.startswith("PLATFORM"):
                platforms[val] += 1
            elif key.startswith("objects"):
                objects.update(val)
    return {"objects": dict(sorted(objects.items())), "platforms": dict(sorted(platforms.items()))}


def _judges(spec: Optional[str], graph: SceneGraph):
    if not spec or spec == "heuristic":
        return [HeuristicJudge(graph, f"heuristic{i}") for i in range(3)]
    config = json.loads(Path(spec).read_text(encoding="utf-8"))
    endpoints = config["judges"] if "judges" in config else [config["endpoint"]] * 3
    return [RemoteJudge(EndpointConfig.from_dict(e), name=f"judge{i}") for i, e in enumerate(endpoints)]


def cmd_gen(args) -> int:
    graph = _load_scene(args.scene)
    levels = sorted({int(x) for x in args.levels.split(",") if x.strip()})
    if any(lv not in (1, 2, 3, 4) for lv in levels):
        raise CliError(f"levels must be drawn from 1,2,3,4; got {args.levels}")
    connectors = tuple(c.strip().upper() for c in args.connectors.split(","))
    tasks: List[TaskSpec] = []
    short = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientActions)
        for lv in levels:
            if lv in (1, 2):
                tasks += sample_process_tasks(graph, args.count, 1, seed=args.seed, levels=[lv])
            elif lv == 3:
                tasks += sample_process_tasks(graph, args.count, 2, connectors, seed=args.seed)
            else:
                candidates = instantiate_outcome_templates(load_templates(args.templates), graph, args.seed, args.count)
                judges = _judges(args.judges, graph)
                tasks += [t for t in candidates if vote_feasibility(t, judges, graph)[0]]
        for w in caught:
            if issubclass(w.category, InsufficientActions):
                short = True
                log.warning("%s", w.message)
    prov = provenance("gen", args.seed, graph, levels=levels, count=args.count, insufficient=short)
    dump_tasks(tasks, args.out, prov)
    cov = dict(coverage(tasks), provenance=prov)
    Path(str(args.out) + ".coverage.json").write_text(json.dumps(cov, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({"tasks": len(tasks), "out": str(args.out), "insufficient": short}))
    return 0


# ---------------------------------------------------------------------------
# bench / judge


def _agent_spec(value: str, seed: int) -> dict:
    if value in ("random", "oracle", "scripted"):
        return {"agent": value, "seed": seed}
    path = Path(value)
    if not path.is_file():
        raise CliError(f"unknown agent {value!r} (expected random, oracle, scripted or a config file)")
    spec = json.loads(path.read_text(encoding="utf-8"))
    spec.setdefault("seed", seed)
    return spec


def _process_tasks(tasks: Sequence[TaskSpec]) -> List[TaskSpec]:
    keep = [t for t in tasks if t.level in (1, 2, 3)]
    if len(keep) < len(tasks):
        log.warning("skipping %d outcome task(s): they have no machine-checkable goal", len(tasks) - len(keep))
    return keep


def cmd_bench(args) -> int:
    graph = _load_scene(args.scene)
    tasks = _process_tasks(load_tasks(args.tasks))
    if not tasks:
        raise CliError("no runnable tasks in task file")
    spec = _agent_spec(args.agent, args.seed)
    memory = LongTermMemory.load(args.memory) if args.memory else None
    entries = memory.entries if memory else ()

    def make(task, seed):
        return make_agent(spec, task, graph, seed, entries)

    def context():
        return AgentContext(preamble=load_preamble(), memory=(memory.render() or None) if memory else None,
                            memory_entries=list(entries))

    episodes = run_batch(tasks, graph, make, args.seed, args.parallel, args.strict_grammar, context)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance("bench", args.seed, graph, agent=spec.get("agent"))
    write_episode_log(episodes, out / "episodes.jsonl", prov)
    results = [e.result for e in episodes]
    report = aggregate(results)
    (out / "report.csv").write_text(csv_comment(prov) + report.to_csv(), encoding="utf-8")
    (out / "episodes.csv").write_text(csv_comment(prov) + episodes_csv(results), encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return 0


def _log_provenance(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = json.loads(fh.readline() or "{}")
    return first.get("provenance", {})


def cmd_judge(args) -> int:
    graph = _load_scene(args.scene)
    prov = _log_provenance(args.log)
    if prov.get("scene_digest") and prov["scene_digest"] != graph.digest():
        raise CliError("episode log was recorded on a different scene")
    episodes = read_episode_log(args.log)
    if not episodes:
        raise CliError("episode log holds no episodes")
    results = []
    mismatches = 0
    for head, trace, logged in episodes:
        if "task" not in head:
            raise CliError(f"episode {head.get('task_id')} lacks its task record")
        task = TaskSpec.from_dict(head["task"])
        result = evaluate_episode(task, graph, [{k: v for k, v in r.items() if k != "task_id"} for r in trace])
        if logged is not None and logged != result.to_dict():
            mismatches += 1
        results.append(result)
    report = aggregate(results)
    seed = prov.get("seed", 0)
    text = csv_comment(provenance("judge", seed, graph)) + report.to_csv()
    _write(args.out, text)
    if args.episodes_out:
        _write(args.episodes_out, csv_comment(provenance("judge", seed, graph)) + episodes_csv(results))
    if mismatches:
        log.warning("%d episode(s) scored differently from the logged result", mismatches)
    return 0


# ---------------------------------------------------------------------------
# reflect / play


def cmd_reflect(args) -> int:
    train_graph = _load_scene(args.train_scene)
    test_graph = _load_scene(args.test_scene)
    if train_graph.digest() == test_graph.digest():
        log.warning("train and test scenes are identical; lessons may leak")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientActions)
        train = TaskSet(train_graph, _load_or_sample(args.train_tasks, train_graph, args.train_count, args.seed))
        test = TaskSet(test_graph, _load_or_sample(args.test_tasks, test_graph, args.test_count, args.seed + 1))
    spec = _agent_spec(args.agent, args.seed)
    memory = LongTermMemory.load(args.memory_in) if args.memory_in else LongTermMemory(args.capacity)

    def factory(task, graph, seed, entries):
        return make_agent(spec, task, graph, seed, entries)

    before, after = run_reflection_loop(train, test, factory, args.trials, memory, args.seed)
    if args.memory_out:
        memory.save(args.memory_out)
    prov = provenance("reflect", args.seed, test_graph, train_scene=train_graph.name, trials=args.trials)
    lines = [csv_comment(prov).rstrip("\n"), "phase,level,episodes,mean_ip,sr_percent"]
    for phase, rep in (("before", before), ("after", after)):
        for r in rep.rows:
            lines.append(f"{phase},{r.level},{r.episodes},{r.mean_ip:.2f},{r.sr_percent:.2f}")
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def _load_or_sample(path: Optional[str], graph: SceneGraph, count: int, seed: int) -> List[TaskSpec]:
    if path:
        return _process_tasks(load_tasks(path))
    return sample_process_tasks(graph, count, 1, seed=seed)


def cmd_play(args) -> int:
    graph = _load_scene(args.scene)
    tasks = _process_tasks(load_tasks(args.tasks))
    if args.task_id:
        tasks = [t for t in tasks if t.task_id == args.task_id]
        if not tasks:
            raise CliError(f"task {args.task_id} not found")
    agent = HumanAgent()
    results = []
    for i, task in enumerate(tasks[: args.limit] if args.limit else tasks):
        try:
            ep = run_episode(task, graph, agent, args.seed ^ i, args.strict_grammar)
        except EOFError:
            break
        print(f"Episode finished: success={str(ep.result.success).lower()} ip={ep.result.intermediate_points:.0f} "
              f"reason={ep.result.reason}")
        results.append(ep.result)
    if results:
        sys.stdout.write(aggregate(results).to_csv())
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=TOOL_NAME, description="Rearrangement task generation and agent benchmarking.")
    p.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="build a scene graph and print receptacle statistics")
    g.add_argument("scene")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_graph)

    g = sub.add_parser("gen", help="generate tasks as JSONL")
    g.add_argument("scene")
    g.add_argument("--levels", default="1,2,3")
    g.add_argument("--count", type=int, default=100, help="tasks per level")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--connectors", default="THEN")
    g.add_argument("--templates", default=None, help="outcome template file (level 4)")
    g.add_argument("--judges", default="heuristic", help="'heuristic' or a JSON endpoint config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("bench", help="run an agent over a task file")
    g.add_argument("scene")
    g.add_argument("tasks")
    g.add_argument("--agent", default="random", help="random, oracle, scripted, or a JSON agent config")
    g.add_argument("--parallel", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--memory", default=None, help="long-term memory file to inject")
    g.add_argument("--out-dir", default="bench_out")
    g.add_argument("--strict-grammar", action="store_true")
    g.set_defaults(func=cmd_bench)

    g = sub.add_parser("judge", help="re-score an episode log")
    g.add_argument("scene")
    g.add_argument("log")
    g.add_argument("--out", default=None)
    g.add_argument("--episodes-out", default=None)
    g.set_defaults(func=cmd_judge)

    g = sub.add_parser("reflect", help="trial episodes on one scene, evaluation on another")
    g.add_argument("train_scene")
    g.add_argument("test_scene")
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--agent", default="scripted")
    g.add_argument("--train-tasks", default=None)
    g.add_argument("--test-tasks", default=None)
    g.add_argument("--train-count", type=int, default=10)
    g.add_argument("--test-count", type=int, default=40)
    g.add_argument("--capacity", type=int, default=10)
    g.add_argument("--memory-in", default=None)
    g.add_argument("--memory-out", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_reflect)

    g = sub.add_parser("play", help="type actions by hand")
    g.add_argument("scene")
    g.add_argument("tasks")
    g.add_argument("--task-id", default=None)
    g.add_argument("--limit", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--strict-grammar", action="store_true")
    g.set_defaults(func=cmd_play)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
