"""Walk the bundled offline trajectory tree and watch the shaped rewards.

The tree stores kernel variants as nodes and optimization actions as edges;
episodes replay stored compile/correctness/timing outcomes, so no code
generation or GPU is involved. Rewards grade compile failures, wrong
results, neutral rewrites, and measured improvements, all decaying with the
step index; stopping pays out the accumulated speedup.
"""

from kernopt import data_path
from kernopt.actions import parse_action_text, render_action
from kernopt.env import OfflineEnv, golden_path, load_tree
from kernopt.model import parse_hardware_spec

tree = load_tree(data_path("mini_env", "t1.tree"))
hardware = parse_hardware_spec(data_path("hardware", "h100.json"))
print(f"tree {tree.task.task_id}: {len(tree.nodes)} nodes, depth {tree.depth()}")
print(f"root runtime {tree.root.report.runtime_ms} ms")

path = golden_path(tree)
print("golden path:",
      " -> ".join(render_action(n.incoming_action) for n in path[1:]))

env = OfflineEnv(tree, hardware, max_steps=8)
env.reset()
script = [render_action(path[1].incoming_action),   # improving edge
          "fuse lines 98-99",                       # off-tree: stay + penalty
          render_action(path[2].incoming_action),   # improving edge
          "stop"]                                   # cash in the speedup
total = 0.0
for text in script:
    obs, reward, done = env.step(parse_action_text(text))
    total += reward
    print(f"  {text:<18} reward {reward:+.4f}  done={done}  "
          f"({obs.history[-1].summary})")
print(f"episode return {total:.4f}")
