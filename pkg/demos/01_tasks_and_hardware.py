"""Load a task suite and hardware descriptors, and look at what's inside.

Every pipeline run starts from these two files: the suite says *what* to
compute, the hardware record says *where* the kernels will run.
"""

from kernopt import data_path
from kernopt.model import parse_hardware_spec, parse_task_suite

tasks = parse_task_suite(data_path("mini_suite.json"))
print(f"mini suite: {len(tasks)} tasks")
for task in tasks:
    shapes = ", ".join(str(list(t.shape)) for t in task.input_spec)
    print(f"  {task.task_id}: {task.description}")
    print(f"      inputs: {shapes}")

print()
for name in ("v100", "a100", "h100"):
    hw = parse_hardware_spec(data_path("hardware", f"{name}.json"))
    print(f"{hw.name:<5} ({hw.architecture:<6}): {hw.sm_count} SMs, "
          f"{hw.memory_bandwidth_gbps} GB/s, {hw.fp32_tflops} FP32 TFLOPS, "
          f"{hw.shared_memory_per_sm_kb} KB shared/SM")

print()
print("the first task's reference implementation:")
print(tasks[0].reference_source)
