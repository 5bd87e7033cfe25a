"""Verify real kernels through the execution sandbox (the runner package).

Requires the companion `kernel-runner` package (see runner/ in this
repository). The optimizer talks to it over one JSON record per line on the
child's standard streams; here we verify each mini-suite reference against
itself on the CPU and time it, then show a wrong candidate being caught.
"""

import sys

from kernopt import data_path
from kernopt.clients import SubprocessRunner
from kernopt.model import KernelSource, SourceLanguage, parse_task_suite

runner = SubprocessRunner([sys.executable, "-m", "kernel_runner.cli",
                           "--device", "cpu"])
tasks = parse_task_suite(data_path("mini_suite.json"))

print("verifying each reference against itself (identity):")
for task in tasks:
    source = KernelSource(SourceLanguage.REFERENCE, task.reference_source)
    report = runner.verify(source, task, timing=(2, 5), tolerance=(1e-3, 1e-3))
    print(f"  {task.task_id}: correct={report.correct} "
          f"runtime={report.runtime_ms:.4f}ms baseline={report.baseline_ms:.4f}ms")

print("\na wrong candidate (bias and relu dropped) is caught:")
task = tasks[0]
wrong = KernelSource(SourceLanguage.KERNEL_DSL,
                     "h = matmul(in0, in1)\nout = reduce_max(h)\nreturn out")
report = runner.verify(wrong, task, timing=(0, 1), tolerance=(1e-6, 1e-6))
print(f"  correct={report.correct} error: {report.error_text}")
runner.close()
