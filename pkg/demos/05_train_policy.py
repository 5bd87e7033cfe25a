"""Train the featurized planning policy with PPO on a synthetic tree.

The synthetic generator plants exactly one strictly improving root-to-leaf
path among decoys (compile failures, wrong results, slowdowns). Training
should concentrate the root distribution on the golden edge and learn to
stop once the improvements are exhausted.
"""

from kernopt import data_path
from kernopt.actions import enumerate_actions, render_action
from kernopt.env import OfflineEnv, generate_synthetic_tree, golden_path
from kernopt.model import parse_hardware_spec
from kernopt.policy import FeaturizedPolicy, score_actions
from kernopt.training import Trainer, TrainerConfig, evaluate_policy

hardware = parse_hardware_spec(data_path("hardware", "h100.json"))
tree = generate_synthetic_tree(seed=7, depth=3, branching=3)
env = OfflineEnv(tree, hardware, max_steps=8)
golden = [render_action(n.incoming_action) for n in golden_path(tree)[1:]]
print("golden path:", " -> ".join(golden))


def root_distribution(backend):
    obs = env.reset()
    catalog = enumerate_actions(obs)
    dist = score_actions(obs, catalog, backend)
    return {render_action(a): float(p)
            for a, p in zip(catalog.actions, dist.probabilities)}


backend = FeaturizedPolicy()
print("\nroot distribution before training:")
for text, p in root_distribution(backend).items():
    print(f"  {text:<18} {p:.3f}")

cfg = TrainerConfig(iterations=60)
trainer = Trainer([env], backend, cfg, seed=7)
log = trainer.run()
print(f"\ntrained {cfg.iterations} iterations; "
      f"mean return {log[0]['mean_return']:.3f} -> {log[-1]['mean_return']:.3f}")

print("\nroot distribution after training:")
for text, p in sorted(root_distribution(backend).items(),
                      key=lambda kv: -kv[1]):
    marker = "  <- golden" if text == golden[0] else ""
    print(f"  {text:<18} {p:.3f}{marker}")

ret, actions = evaluate_policy(env, backend, greedy=True)
print(f"\ngreedy rollout: {' -> '.join(actions)}  (return {ret:.3f})")
