#!/usr/bin/env python3
"""Test success rate of the memory-following agent as the number of trial episodes grows."""

from importlib import resources

from rearrangekit.agents import MemoryFollowingAgent
from rearrangekit.reflection import LongTermMemory, run_reflection_loop
from rearrangekit.runner import TaskSet
from rearrangekit.scene import load_scene_file
from rearrangekit.tasks import sample_process_tasks

scenes = resources.files("rearrangekit") / "data/scenes"
train_graph = load_scene_file(str(scenes / "apartment.json"))
test_graph = load_scene_file(str(scenes / "office.json"))
train = TaskSet(train_graph, sample_process_tasks(train_graph, 10, seed=0))
test = TaskSet(test_graph, sample_process_tasks(test_graph, 40, seed=1))


def agent(task, graph, seed, entries):
    return MemoryFollowingAgent(task, graph, entries)


memory = None
for trials in (0, 1, 2, 3, 5, 10):
    memory = LongTermMemory(10)
    _, after = run_reflection_loop(train, test, agent, trials, memory)
    print(f"trials={trials:2d}  SR={after.overall.sr_percent:5.1f}%  IP={after.overall.mean_ip:5.1f}")

print("\nmemory after 10 trials:\n")
print(memory.render())
