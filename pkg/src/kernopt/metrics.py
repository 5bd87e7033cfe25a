"""Benchmark metrics: call/execute accuracy, fast_p, mean speedup.

fast_p is the fraction of tasks whose generated kernel is correct and beats
the reference baseline by strictly more than factor p; mean speedup is the
arithmetic mean over all N tasks with incorrect tasks contributing 0. The
correctness tolerance and the timing protocol are suite-wide contracts
declared here and stamped into every report for auditability.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .model import KernelTask
from .orchestrate import OptimizationResult

DEFAULT_TOLERANCE = (1e-2, 1e-2)   # atol, rtol for elementwise |a-b| <= atol + rtol|b|
DEFAULT_TIMING = (3, 10)           # warmup runs, measured runs (median reported)
DEFAULT_P_VALUES = (1.0, 2.0)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TaskResult:
    """Per-task outcome row feeding the suite metrics."""

    task_id: str
    compile_ok: bool
    correct: bool
    speedup: float

    def __post_init__(self):
        if self.correct and not self.compile_ok:
            raise MetricsError(f"task {self.task_id}: correct requires compile_ok")
        if not self.correct and self.speedup != 0:
            raise MetricsError(f"task {self.task_id}: incorrect tasks carry speedup 0")
        if self.speedup < 0:
            raise MetricsError(f"task {self.task_id}: speedup must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "compile_ok": self.compile_ok,
                "correct": self.correct, "speedup": self.speedup}


def fast_p(results: Sequence[TaskResult], p: float) -> float:
    """Fraction of tasks that are correct with speedup strictly above p."""
    if not results:
        raise MetricsError("fast_p needs a nonempty result set")
    if p < 0:
        raise MetricsError("p must be nonnegative")
    correct = np.array([r.correct for r in results])
    speedups = np.array([r.speedup for r in results])
    return float(np.mean(correct & (speedups > p)))


def mean_speedup(results: Sequence[TaskResult]) -> float:
    """Arithmetic mean of speedups over all tasks (0 for incorrect ones)."""
    if not results:
        raise MetricsError("mean_speedup needs a nonempty result set")
    return float(np.mean([r.speedup for r in results]))


def accuracies(results: Sequence[TaskResult]) -> tuple[float, float]:
    """(call_accuracy, execute_accuracy): compiled fraction, correct fraction."""
    if not results:
        raise MetricsError("accuracies needs a nonempty result set")
    call = float(np.mean([r.compile_ok for r in results]))
    execute = float(np.mean([r.correct for r in results]))
    return call, execute


@dataclass(frozen=True)
class MetricsReport:
    suite: str
    n_tasks: int
    call_accuracy: float
    execute_accuracy: float
    fast_values: dict[float, float]
    mean_speedup: float
    per_task: tuple[TaskResult, ...]
    tolerance: tuple[float, float] = DEFAULT_TOLERANCE

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "N": self.n_tasks,
            "call_accuracy": self.call_accuracy,
            "execute_accuracy": self.execute_accuracy,
            "fast": {_format_p(p): v for p, v in sorted(self.fast_values.items())},
            "mean_speedup": self.mean_speedup,
            "tolerance": {"atol": self.tolerance[0], "rtol": self.tolerance[1]},
            "per_task": [r.to_dict() for r in self.per_task],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def _format_p(p: float) -> str:
    return f"{p:g}"


def compute_report(results: Sequence[TaskResult], suite: str,
                   p_values: Sequence[float] = DEFAULT_P_VALUES,
                   tolerance: tuple[float, float] = DEFAULT_TOLERANCE) -> MetricsReport:
    if not results:
        raise MetricsError("cannot build a report from an empty result set")
    call, execute = accuracies(results)
    return MetricsReport(
        suite=suite, n_tasks=len(results),
        call_accuracy=call, execute_accuracy=execute,
        fast_values={float(p): fast_p(results, p) for p in p_values},
        mean_speedup=mean_speedup(results),
        per_task=tuple(results), tolerance=tolerance)


def result_row(result: OptimizationResult) -> TaskResult:
    """Fold one optimization episode into a metrics row."""
    report = result.final_report
    return TaskResult(
        task_id=result.task_id, compile_ok=report.compile_ok,
        correct=report.correct,
        speedup=result.best_speedup if report.correct else 0.0)


def failed_row(task_id: str) -> TaskResult:
    return TaskResult(task_id=task_id, compile_ok=False, correct=False, speedup=0.0)


def run_benchmark(tasks: Sequence[KernelTask],
                  pipeline: Callable[[KernelTask], OptimizationResult],
                  suite: str | None = None,
                  p_values: Sequence[float] = DEFAULT_P_VALUES,
                  tolerance: tuple[float, float] = DEFAULT_TOLERANCE,
                  parallelism: int = 1) -> MetricsReport:
    """Run the pipeline over a suite and aggregate the metrics.

    Per-task failures become (compile_ok=False, correct=False, speedup=0)
    rows; the suite never aborts. Task order is preserved in the report.
    """
    if not tasks:
        raise MetricsError("benchmark suite is empty")
    suite_name = suite if suite is not None else tasks[0].suite.value

    def run_one(task: KernelTask) -> TaskResult:
        try:
            return result_row(pipeline(task))
        except Exception:
            return failed_row(task.task_id)

    if parallelism <= 1:
        rows = [run_one(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(run_one, tasks))
    return compute_report(rows, suite_name, p_values=p_values, tolerance=tolerance)


def render_table(report: MetricsReport) -> str:
    """Fixed-width text table in the benchmark-sheet column layout."""
    fast_keys = sorted(report.fast_values)
    fast_header = "/".join(f"fast_{_format_p(p)}" for p in fast_keys)
    fast_cell = "/".join(f"{100 * report.fast_values[p]:.2f}" for p in fast_keys)
    header = (f"{'Suite':<10} {'N':>4} {'Call Acc(%)':>12} {'Exec Acc(%)':>12} "
              f"{fast_header + '(%)':>18} {'Mean Speedup':>14}")
    row = (f"{report.suite:<10} {report.n_tasks:>4} "
           f"{100 * report.call_accuracy:>12.2f} "
           f"{100 * report.execute_accuracy:>12.2f} "
           f"{fast_cell:>18} {report.mean_speedup:>14.4f}")
    tolerance_line = (f"tolerance: atol={report.tolerance[0]:g} "
                      f"rtol={report.tolerance[1]:g}")
    return "\n".join([header, "-" * len(header), row, tolerance_line])
