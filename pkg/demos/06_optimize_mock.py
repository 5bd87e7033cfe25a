"""One full optimization episode, end to end, against scripted mocks.

The coder replays committed responses and the runner serves outcomes from a
source-hash cost table, so the whole loop (verify reference, translate,
propose, edit, verify, accept/reject) runs deterministically on any machine.
"""

import json

from kernopt import data_path
from kernopt.clients import MockTableRunner, ScriptedCoder
from kernopt.model import parse_hardware_spec, parse_task_suite
from kernopt.orchestrate import ExampleBank, OptimizeSettings, optimize
from kernopt.policy import UniformPolicy

tasks = {t.task_id: t for t in parse_task_suite(data_path("mini_suite.json"))}
task = tasks["t1"]
script = json.loads(data_path("scripted", "coder_script.json").read_text())
coder = ScriptedCoder(script[task.task_id])
runner = MockTableRunner.from_file(data_path("scripted", "cost_table.json"))
bank = ExampleBank(data_path("example_bank"))
hardware = parse_hardware_spec(data_path("hardware", "h100.json"))

result = optimize(task, UniformPolicy(), coder, runner,
                  OptimizeSettings(hardware=hardware, max_steps=3), bank)

print(f"task {task.task_id}: {task.description}")
for step in result.steps:
    if step.report is None:
        print(f"  step {step.index}: {step.action_text} (no verification)")
        continue
    verdict = "accepted" if step.accepted else "rejected"
    print(f"  step {step.index}: {step.action_text:<18} compile={step.report.compile_ok} "
          f"correct={step.report.correct} runtime={step.report.runtime_ms:.2f}ms "
          f"-> {verdict}")
print(f"\nbest speedup {result.best_speedup:.2f}x; final kernel:")
print(result.final_source.text)
