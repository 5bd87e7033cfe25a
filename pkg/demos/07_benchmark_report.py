"""Run the mock benchmark suite and render the metrics table.

Mirrors `kernopt eval --config src/kernopt/data/configs/mock_eval.json`:
call/execute accuracy, fast_1/fast_2 (the fraction of tasks correct and
strictly faster than the baseline by the given factor), and mean speedup.
"""

import json

from kernopt import data_path
from kernopt.clients import MockTableRunner, ScriptedCoder
from kernopt.metrics import render_table, run_benchmark
from kernopt.model import parse_hardware_spec, parse_task_suite
from kernopt.orchestrate import ExampleBank, OptimizeSettings, optimize
from kernopt.policy import UniformPolicy

tasks = parse_task_suite(data_path("mini_suite.json"))
script = json.loads(data_path("scripted", "coder_script.json").read_text())
runner = MockTableRunner.from_file(data_path("scripted", "cost_table.json"))
bank = ExampleBank(data_path("example_bank"))
hardware = parse_hardware_spec(data_path("hardware", "h100.json"))


def pipeline(task):
    return optimize(task, UniformPolicy(), ScriptedCoder(script[task.task_id]),
                    runner, OptimizeSettings(hardware=hardware, max_steps=3),
                    bank)


report = run_benchmark(tasks, pipeline, suite="CUSTOM")
print(render_table(report))
print()
for row in report.per_task:
    print(f"  {row.task_id}: correct={row.correct} speedup={row.speedup:.2f}")
