import numpy as np
import pytest

from kernopt.metrics import (
    MetricsError,
    TaskResult,
    accuracies,
    compute_report,
    fast_p,
    mean_speedup,
    render_table,
    run_benchmark,
)
from kernopt.model import (
    ExecutionReport,
    KernelSource,
    KernelTask,
    SourceLanguage,
    Suite,
    TensorSpec,
)
from kernopt.orchestrate import OptimizationResult, StepRecord

from oracles import recount_metrics


def row(task_id="t", compile_ok=True, correct=True, speedup=1.0) -> TaskResult:
    return TaskResult(task_id=task_id, compile_ok=compile_ok, correct=correct,
                      speedup=speedup if correct else 0.0)


FOUR = [row("a", speedup=1.5), row("b", speedup=0.8),
        row("c", correct=False), row("d", speedup=2.5)]


def test_fast_p_hand_counts():
    assert fast_p(FOUR, 1.0) == 0.5
    assert fast_p(FOUR, 2.0) == 0.25


def test_fast_p_all_incorrect():
    results = [row(str(i), compile_ok=True, correct=False) for i in range(4)]
    for p in (0.0, 0.5, 1.0, 2.0):
        assert fast_p(results, p) == 0.0


def test_fast_p_strict_inequality():
    results = [row("x", speedup=1.0)]
    assert fast_p(results, 1.0) == 0.0      # exactly p does not count
    assert fast_p(results, 0.999) == 1.0


def test_mean_speedup_hand_cases():
    assert mean_speedup([row("a", speedup=2.0), row("b", speedup=1.0)]) == 1.5
    assert mean_speedup(FOUR) == pytest.approx((1.5 + 0.8 + 0 + 2.5) / 4)
    assert mean_speedup([row(str(i), correct=False) for i in range(4)]) == 0.0


def test_accuracies_hand_cases():
    results = [row("a", compile_ok=True, correct=False), row("b")]
    assert accuracies(results) == (1.0, 0.5)
    assert accuracies([row("a"), row("b")]) == (1.0, 1.0)


def test_empty_results_rejected():
    for fn in (lambda: fast_p([], 1.0), lambda: mean_speedup([]),
               lambda: accuracies([])):
        with pytest.raises(MetricsError):
            fn()


def random_results(rng: np.random.Generator, n: int) -> list[TaskResult]:
    out = []
    for i in range(n):
        compile_ok = bool(rng.random() < 0.8)
        correct = bool(compile_ok and rng.random() < 0.7)
        speedup = float(rng.uniform(0.05, 4.0)) if correct else 0.0
        out.append(TaskResult(task_id=f"r{i}", compile_ok=compile_ok,
                              correct=correct, speedup=speedup))
    return out


def test_metrics_match_recount_oracle():
    rng = np.random.default_rng(17)
    ps = (0.5, 1.0, 2.0)
    for _ in range(50):
        results = random_results(rng, int(rng.integers(1, 400)))
        expected = recount_metrics(results, ps)
        call, execute = accuracies(results)
        assert call == pytest.approx(expected["call"], rel=1e-12, abs=0)
        assert execute == pytest.approx(expected["execute"], rel=1e-12, abs=0)
        assert mean_speedup(results) == pytest.approx(expected["mean"], rel=1e-12)
        for p in ps:
            assert fast_p(results, p) == pytest.approx(expected["fast"][p],
                                                       rel=1e-12, abs=0)


def test_fast_p_monotone_in_p():
    rng = np.random.default_rng(5)
    for _ in range(20):
        results = random_results(rng, 100)
        values = [fast_p(results, p) for p in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)]
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_bounds_chain():
    rng = np.random.default_rng(6)
    for _ in range(20):
        results = random_results(rng, 64)
        call, execute = accuracies(results)
        for p in (0.0, 1.0, 2.0):
            assert fast_p(results, p) <= execute <= call


def test_task_result_invariants():
    with pytest.raises(MetricsError):
        TaskResult(task_id="x", compile_ok=False, correct=True, speedup=1.0)
    with pytest.raises(MetricsError):
        TaskResult(task_id="x", compile_ok=True, correct=False, speedup=1.0)
    with pytest.raises(MetricsError):
        TaskResult(task_id="x", compile_ok=True, correct=True, speedup=-0.5)


def _result(task: KernelTask, correct: bool, speedup: float) -> OptimizationResult:
    source = KernelSource(SourceLanguage.KERNEL_DSL, task.reference_source)
    if correct:
        report = ExecutionReport(True, True, 1.0 / speedup, 1.0)
    else:
        report = ExecutionReport(False, False, 0.0, 1.0)
    return OptimizationResult(
        task_id=task.task_id, final_source=source, final_report=report,
        steps=(StepRecord(0, None, "verify", source, report, correct),),
        best_speedup=speedup if correct else 0.0)


def make_task(task_id: str) -> KernelTask:
    return KernelTask(task_id=task_id, description="d", reference_source="return x",
                      input_spec=(TensorSpec((2,), "float32", 0),),
                      suite=Suite.CUSTOM)


def test_run_benchmark_matches_scripted_ground_truth():
    tasks = [make_task(f"m{i}") for i in range(5)]
    truth = {"m0": (True, 2.0), "m1": (True, 1.0), "m2": (False, 0.0),
             "m3": (True, 4.0), "m4": (True, 0.5)}

    def pipeline(task):
        correct, speedup = truth[task.task_id]
        return _result(task, correct, speedup)

    report = run_benchmark(tasks, pipeline)
    assert report.n_tasks == 5
    assert report.call_accuracy == 0.8
    assert report.execute_accuracy == 0.8
    assert report.mean_speedup == pytest.approx((2.0 + 1.0 + 0 + 4.0 + 0.5) / 5)
    assert report.fast_values == {1.0: 0.4, 2.0: 0.2}
    assert [r.task_id for r in report.per_task] == [t.task_id for t in tasks]


def test_run_benchmark_default_fast_keys():
    tasks = [make_task("k0")]
    report = run_benchmark(tasks, lambda t: _result(t, True, 1.0))
    assert set(report.fast_values) == {1.0, 2.0}
    assert set(report.to_dict()["fast"]) == {"1", "2"}


def test_run_benchmark_survives_task_failures():
    tasks = [make_task("ok"), make_task("boom")]

    def pipeline(task):
        if task.task_id == "boom":
            raise RuntimeError("exploded")
        return _result(task, True, 2.0)

    report = run_benchmark(tasks, pipeline)
    assert report.per_task[1].compile_ok is False
    assert report.per_task[1].speedup == 0.0
    assert report.execute_accuracy == 0.5


def test_run_benchmark_rejects_empty_suite():
    with pytest.raises(MetricsError):
        run_benchmark([], lambda t: None)


def test_run_benchmark_parallel_matches_serial():
    tasks = [make_task(f"p{i}") for i in range(8)]

    def pipeline(task):
        speedup = 1.0 + int(task.task_id[1:])
        return _result(task, True, float(speedup))

    serial = run_benchmark(tasks, pipeline, parallelism=1)
    parallel = run_benchmark(tasks, pipeline, parallelism=4)
    assert serial.to_dict() == parallel.to_dict()


def test_report_dict_shape_and_table():
    report = compute_report(FOUR, "CUSTOM", p_values=(1.0, 2.0),
                            tolerance=(0.01, 0.02))
    payload = report.to_dict()
    assert payload["suite"] == "CUSTOM"
    assert payload["N"] == 4
    assert payload["tolerance"] == {"atol": 0.01, "rtol": 0.02}
    table = render_table(report)
    assert "fast_1/fast_2(%)" in table
    assert "50.00/25.00" in table
    assert "atol=0.01" in table
