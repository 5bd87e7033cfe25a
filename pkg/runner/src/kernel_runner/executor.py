"""Compile and execute kernel sources in an isolated child process.

A source is a statement body over inputs ``in0..inN-1``; it is wrapped in a
function definition for compilation, so a top-level ``return`` yields the
kernel's output. Each FULL evaluation runs in a forked child with a
wall-clock timeout: a crashing or looping candidate kills only the child,
never the serving loop. Timing is median-of-N after warmup, measured for
the candidate and the reference in the same child.
"""

from __future__ import annotations

import multiprocessing
import textwrap
import time
import traceback
from dataclasses import dataclass
from statistics import median
from typing import Any, Callable

import numpy as np

from .ops import NUMPY_OPS, generate_inputs

DEFAULT_TIMEOUT_S = 30.0
_TRACEBACK_LIMIT = 500


@dataclass
class EvalOutcome:
    compile_ok: bool
    correct: bool
    runtime_ms: float
    baseline_ms: float
    max_abs_err: float | None
    error_text: str | None


def _truncate(text: str, limit: int = _TRACEBACK_LIMIT) -> str:
    return text if len(text) <= limit else text[:limit] + "...[truncated]"


def compile_kernel(source: str, n_inputs: int):
    """Wrap a statement body in a function and compile it.

    Returns (code_object, error_text); error_text is None on success.
    """
    args = ", ".join(f"in{i}" for i in range(n_inputs))
    wrapper = f"def __kernel__({args}):\n" + textwrap.indent(source, "    ")
    try:
        return compile(wrapper, "<kernel>", "exec"), None
    except SyntaxError as exc:
        return None, _truncate(f"syntax error: {exc}")


def _build_callable(source: str, inputs: list, device: str) -> Callable[[], Any]:
    if device == "gpu":
        import torch

        from .ops import torch_ops

        namespace: dict[str, Any] = dict(torch_ops("cuda"))
        tensors = [torch.as_tensor(np.ascontiguousarray(x)).cuda() for x in inputs]
    else:
        namespace = dict(NUMPY_OPS)
        tensors = list(inputs)
    namespace["np"] = np
    code, error = compile_kernel(source, len(inputs))
    if code is None:
        raise SyntaxError(error)
    exec(code, namespace)
    kernel = namespace["__kernel__"]
    return lambda: kernel(*tensors)


def _to_arrays(value: Any) -> list[np.ndarray]:
    if value is None:
        return []
    if isinstance(value, (tuple, list)):
        out = []
        for item in value:
            out.extend(_to_arrays(item))
        return out
    if hasattr(value, "detach"):  # torch tensor
        value = value.detach().cpu().numpy()
    return [np.asarray(value)]


def compare_outputs(candidate: Any, reference: Any, atol: float,
                    rtol: float) -> tuple[bool, float | None, str | None]:
    """Elementwise |a-b| <= atol + rtol*|b| over the flattened output lists."""
    cand = _to_arrays(candidate)
    ref = _to_arrays(reference)
    if len(cand) != len(ref):
        return False, None, (f"output arity mismatch: candidate {len(cand)} "
                             f"vs reference {len(ref)}")
    worst = 0.0
    for got, want in zip(cand, ref):
        if got.shape != want.shape:
            return False, None, (f"output shape mismatch: {got.shape} "
                                 f"vs {want.shape}")
        diff = np.abs(got.astype(np.float64) - want.astype(np.float64))
        if diff.size == 0:
            continue
        if not np.all(np.isfinite(diff)):
            return False, None, "non-finite values in output"
        worst = max(worst, float(np.max(diff)))
        bound = atol + rtol * np.abs(want.astype(np.float64))
        if not np.all(diff <= bound):
            return False, worst, (f"output mismatch beyond tolerance "
                                  f"(atol={atol}, rtol={rtol})")
    return True, worst, None


def _time_callable(fn: Callable[[], Any], warmup: int, iters: int,
                   device: str) -> float:
    """Median wall-clock milliseconds over ``iters`` runs after warmup."""
    sync = None
    if device == "gpu":
        import torch

        sync = torch.cuda.synchronize
    for _ in range(max(0, warmup)):
        fn()
    if sync:
        sync()
    samples = []
    for _ in range(max(1, iters)):
        start = time.perf_counter()
        fn()
        if sync:
            sync()
        samples.append((time.perf_counter() - start) * 1000.0)
    return float(median(samples))


def _evaluate_in_child(conn, candidate_source: str, reference_source: str,
                       input_spec: list[dict], warmup: int, iters: int,
                       atol: float, rtol: float, device: str) -> None:
    """Child-process body; ships a result dict (or dies trying)."""
    try:
        inputs = generate_inputs(input_spec)
        try:
            reference = _build_callable(reference_source, inputs, device)
            reference_output = reference()
        except BaseException:
            conn.send({"stage": "reference",
                       "error": _truncate(traceback.format_exc())})
            return
        try:
            candidate = _build_callable(candidate_source, inputs, device)
            candidate_output = candidate()
        except SyntaxError as exc:
            conn.send({"stage": "candidate_compile", "error": str(exc)})
            return
        except BaseException:
            conn.send({"stage": "candidate_run",
                       "error": _truncate(traceback.format_exc())})
            return
        correct, max_abs_err, error = compare_outputs(
            candidate_output, reference_output, atol, rtol)
        runtime_ms = baseline_ms = 0.0
        if correct:
            runtime_ms = _time_callable(candidate, warmup, iters, device)
            baseline_ms = _time_callable(reference, warmup, iters, device)
        conn.send({"stage": "done", "correct": correct,
                   "max_abs_err": max_abs_err, "error": error,
                   "runtime_ms": runtime_ms, "baseline_ms": baseline_ms})
    except BaseException:
        try:
            conn.send({"stage": "internal",
                       "error": _truncate(traceback.format_exc())})
        except Exception:
            pass


def evaluate_full(candidate_source: str, reference_source: str,
                  input_spec: list[dict], warmup: int, iters: int,
                  atol: float, rtol: float, device: str,
                  timeout_s: float = DEFAULT_TIMEOUT_S) -> EvalOutcome:
    """Full verification of one candidate, isolated and time-bounded."""
    _, compile_error = compile_kernel(candidate_source, len(input_spec))
    if compile_error is not None:
        return EvalOutcome(False, False, 0.0, 0.0, None, compile_error)

    ctx = multiprocessing.get_context("fork")
    parent_conn, child_conn = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_evaluate_in_child,
                       args=(child_conn, candidate_source, reference_source,
                             input_spec, warmup, iters, atol, rtol, device))
    proc.start()
    child_conn.close()
    result: dict | None = None
    if parent_conn.poll(timeout_s):
        try:
            result = parent_conn.recv()
        except EOFError:
            result = None
    alive_after = proc.is_alive()
    if result is None and alive_after:
        proc.terminate()
        proc.join(5)
        return EvalOutcome(True, False, 0.0, 0.0, None, "timeout")
    proc.join(5)
    if proc.is_alive():
        proc.kill()
        proc.join(5)
    if result is None:
        return EvalOutcome(True, False, 0.0, 0.0, None,
                           "worker process died before reporting a result")
    stage = result.get("stage")
    if stage == "reference":
        return EvalOutcome(True, False, 0.0, 0.0, None,
                           f"reference failed: {result['error']}")
    if stage == "candidate_compile":
        return EvalOutcome(False, False, 0.0, 0.0, None, result["error"])
    if stage in ("candidate_run", "internal"):
        return EvalOutcome(True, False, 0.0, 0.0, None,
                           _truncate(result["error"]))
    return EvalOutcome(True, bool(result["correct"]),
                       float(result["runtime_ms"]), float(result["baseline_ms"]),
                       result["max_abs_err"], result["error"])
