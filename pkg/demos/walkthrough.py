#!/usr/bin/env python3
"""Load the bundled apartment, generate a few tasks, and watch the oracle solve one."""

import sys
from importlib import resources

from rearrangekit.agents import OracleAgent, RandomAgent
from rearrangekit.env import reset, step
from rearrangekit.evaluation import evaluate_episode
from rearrangekit.receptacles import refine_receptacles
from rearrangekit.runner import run_episode
from rearrangekit.scene import load_scene_file
from rearrangekit.tasks import sample_process_tasks

scene = sys.argv[1] if len(sys.argv) > 1 else str(resources.files("rearrangekit") / "data/scenes/apartment.json")
graph = load_scene_file(scene)
print(f"{graph.name}: {len(graph.objects)} objects, {len(graph.navigable_platforms())} reachable platforms")

# receptacles around every object on the first occupied platform
pid = next(p for p in graph.navigable_platforms() if graph.children(p))
for oid, recs in refine_receptacles(graph, pid).items():
    print(f"  {oid}: " + ", ".join(f"{r.direction.label} {r.rect.width:.2f}x{r.rect.depth:.2f}" for r in recs))

tasks = sample_process_tasks(graph, 3, seed=1) + sample_process_tasks(graph, 2, max_steps=2, seed=1)
for t in tasks:
    print(f"L{t.level} {t.task_id}: {t.instruction}")

task = tasks[-1]
agent = OracleAgent(task, graph)
state, obs = reset(task, graph, seed=0)
print("\n" + obs)
while not state.terminated:
    action = agent.act(None, obs).raw
    print(f"\n>>> {action}")
    obs, _ = step(state, action)
    print(obs)

result = evaluate_episode(task, graph, state.trace)
print(f"\noracle: success={result.success} ip={result.intermediate_points:.0f} ({result.reason})")

# a random agent on the same task, for contrast
ep = run_episode(task, graph, RandomAgent(seed=3), seed=0)
print(f"random: success={ep.result.success} ip={ep.result.intermediate_points:.0f} ({ep.result.reason})")
