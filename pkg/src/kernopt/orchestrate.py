"""The optimization loop: propose an action, implement it, verify, repeat.

Each iteration the planning policy picks a semantic action over the
current kernel; the editing layer assembles a three-element prompt (kernel,
action text, per-kind examples), calls the coder client, extracts the
candidate, and verifies it on the runner. Candidates are accepted only when
they are correct and strictly faster than the best verified kernel so far,
so the final result can never regress below the verified starting point.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .actions import enumerate_actions, render_action
from .clients import CoderClient, CoderTransportError, RunnerClient, RunnerTransportError
from .env import RewardConfig, compute_reward
from .model import (
    ActionKind,
    ExecutionReport,
    HardwareSpec,
    HistoryEntry,
    KernelSource,
    KernelTask,
    Observation,
    OptimizationAction,
    SourceLanguage,
    content_hash,
)
from .policy import (
    PolicyBackendError,
    argmax_action,
    make_distribution,
    sample_action,
    score_actions,
    uniform_distribution,
)


class OrchestratorError(RuntimeError):
    pass


class ConfigurationError(OrchestratorError):
    pass


class ExtractionError(ValueError):
    """The coder response carries no fenced code block."""


@dataclass(frozen=True)
class PromptBundle:
    """The three prompt elements and their assembly, in fixed order.

    The assembled prompt must contain the previous kernel, the action text,
    and every example verbatim, in that order; the constructor enforces it.
    """

    prev_code: str
    action_text: str
    examples: tuple[str, ...]
    assembled: str

    def __post_init__(self):
        cursor = self.assembled.find(self.prev_code)
        if cursor < 0:
            raise ValueError("assembled prompt must contain the previous kernel")
        cursor = self.assembled.find(self.action_text, cursor + len(self.prev_code))
        if cursor < 0:
            raise ValueError("assembled prompt must contain the action text "
                             "after the kernel")
        cursor += len(self.action_text)
        for i, example in enumerate(self.examples):
            cursor = self.assembled.find(example, cursor)
            if cursor < 0:
                raise ValueError(f"assembled prompt must contain example {i} "
                                 "after the action text")
            cursor += len(example)


class ExampleBank:
    """Per-kind example directory: ``<root>/<kind>/<nn>.txt``.

    Files are read in sorted filename order; each holds a before/after pair
    with a one-line rationale.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ConfigurationError(f"example bank directory {self.root} not found")

    def examples_for(self, kind: ActionKind) -> list[str]:
        directory = self.root / kind.value.lower()
        if not directory.is_dir():
            raise ConfigurationError(
                f"example bank has no directory for kind {kind.value!r} "
                f"(expected {directory})")
        paths = sorted(directory.glob("*.txt"))
        if not paths:
            raise ConfigurationError(
                f"example bank directory {directory} holds no examples")
        return [p.read_text(encoding="utf-8") for p in paths]


def build_prompt(prev: KernelSource, action: OptimizationAction,
                 bank: ExampleBank, examples_per_prompt: int = 3,
                 feedback: str | None = None) -> PromptBundle:
    """Assemble the stepwise edit prompt for one optimization action.

    ``feedback`` carries the failure text of the previous attempt at the
    same action (appended after the examples, at most once per action).
    """
    if action.kind is ActionKind.STOP:
        raise OrchestratorError("cannot build an edit prompt for the stop action")
    examples = tuple(bank.examples_for(action.kind)[:examples_per_prompt])
    action_text = render_action(action)
    parts = [
        "You are optimizing a GPU kernel one step at a time.",
        "Current kernel:",
        f"```\n{prev.text}\n```",
        f"Requested optimization: {action_text}",
        "Apply exactly this optimization to the indicated lines, keeping the "
        "computation's results identical. Do not change unrelated code.",
        f"Examples of this optimization type:",
    ]
    for i, example in enumerate(examples, start=1):
        parts.append(f"Example {i}:\n{example}")
    parts.append("Return the complete updated kernel in one fenced code block.")
    if feedback:
        parts.append(f"The previous attempt at this action failed:\n{feedback}\n"
                     "Produce a corrected implementation.")
    assembled = "\n\n".join(parts)
    return PromptBundle(prev_code=prev.text, action_text=action_text,
                        examples=examples, assembled=assembled)


def build_translation_prompt(source: KernelSource, task: KernelTask) -> str:
    """Prompt for the initial reference -> kernel-DSL translation step."""
    return (
        "Translate the following reference implementation into an equivalent "
        "tile-level GPU kernel, without applying any optimization yet.\n\n"
        f"Task: {task.description}\n\n"
        "Reference implementation:\n"
        f"```\n{source.text}\n```\n\n"
        "Return the complete kernel in one fenced code block."
    )


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_code(response: str) -> KernelSource:
    """Content of the last fenced code block, tagged as kernel DSL."""
    matches = _FENCE_RE.findall(response)
    if not matches:
        raise ExtractionError("response carries no fenced code block")
    text = matches[-1].rstrip("\n")
    if not text:
        raise ExtractionError("fenced code block is empty")
    return KernelSource(SourceLanguage.KERNEL_DSL, text)


@dataclass(frozen=True)
class StepRecord:
    """One loop iteration: what was asked, what came back, what was kept."""

    index: int
    action: OptimizationAction | None
    action_text: str
    candidate: KernelSource | None
    report: ExecutionReport | None
    accepted: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "action": self.action.to_dict() if self.action else None,
            "action_text": self.action_text,
            "candidate": self.candidate.to_dict() if self.candidate else None,
            "report": self.report.to_dict() if self.report else None,
            "accepted": self.accepted,
        }


@dataclass(frozen=True)
class OptimizationResult:
    task_id: str
    final_source: KernelSource
    final_report: ExecutionReport
    steps: tuple[StepRecord, ...]
    best_speedup: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "final_source": self.final_source.to_dict(),
            "final_report": self.final_report.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
            "best_speedup": self.best_speedup,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


@dataclass
class OptimizeSettings:
    """Loop parameters; `hardware` feeds the policy observation."""

    hardware: HardwareSpec
    max_steps: int = 8
    transport_retries: int = 2
    selection: str = "argmax"            # or "sample"
    temperature: float = 1.0
    examples_per_prompt: int = 3
    seed: int = 0
    fallback_uniform: bool = False
    timing: tuple[int, int] = (3, 10)
    tolerance: tuple[float, float] = (1e-2, 1e-2)
    reward_config: RewardConfig = field(default_factory=RewardConfig)


EpisodeLogger = Callable[[dict[str, Any]], None]


def _call_with_retries(fn, retries: int, transport_errors):
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return fn()
        except transport_errors as exc:
            last = exc
    raise OrchestratorError(f"transport failed after {retries + 1} attempts: {last}")


def optimize(task: KernelTask, policy, coder: CoderClient, runner: RunnerClient,
             settings: OptimizeSettings, bank: ExampleBank,
             episode_log: EpisodeLogger | None = None) -> OptimizationResult:
    """Run the full optimization loop for one task.

    Step 0 verifies the reference on the runner (establishing the baseline);
    when the reference is in the high-level language the first coder call is
    a translation step. Every candidate is verified before acceptance, and
    acceptance requires a strict runtime improvement, so accepted runtimes
    decrease monotonically. Per-step failures are recorded, never raised;
    only an unusable runner or a failing reference aborts the task.
    """
    rng = np.random.default_rng(settings.seed)
    log = episode_log or (lambda record: None)

    start = KernelSource(SourceLanguage.REFERENCE, task.reference_source)
    try:
        baseline_report = _call_with_retries(
            lambda: runner.verify(start, task, timing=settings.timing,
                                  tolerance=settings.tolerance),
            settings.transport_retries, (RunnerTransportError,))
    except OrchestratorError as exc:
        raise OrchestratorError(f"runner unreachable for {task.task_id}: {exc}")
    if not baseline_report.correct:
        raise OrchestratorError(
            f"reference for {task.task_id} failed verification: "
            f"{baseline_report.error_text}")

    steps: list[StepRecord] = [StepRecord(0, None, "verify", start,
                                          baseline_report, True)]
    log({"step": 0, "action_text": "verify", "prompt_hash": "",
         "response_hash": "", "compile_ok": baseline_report.compile_ok,
         "correct": baseline_report.correct,
         "runtime_ms": baseline_report.runtime_ms, "accepted": True})

    current = start
    current_report = baseline_report
    best_runtime = baseline_report.runtime_ms
    history: list[HistoryEntry] = []
    coder_calls = 0
    last_failure: tuple[str, str] | None = None   # (action_text, error)
    feedback_given: set[str] = set()              # one self-repair hint per action

    def run_coder(prompt: str) -> str:
        # A call attempt consumes loop budget even when every retry fails.
        nonlocal coder_calls
        coder_calls += 1
        response = _call_with_retries(lambda: coder.generate(prompt),
                                      settings.transport_retries,
                                      (CoderTransportError,))
        # Verbatim exchange record; the per-step records carry only hashes.
        log({"event": "coder_exchange", "call": coder_calls,
             "prompt": prompt, "response": response})
        return response

    def verify(candidate: KernelSource) -> ExecutionReport:
        return _call_with_retries(
            lambda: runner.verify(candidate, task, timing=settings.timing,
                                  tolerance=settings.tolerance),
            settings.transport_retries, (RunnerTransportError,))

    # Initial translation into the kernel DSL, verified like any candidate.
    if current.language is SourceLanguage.REFERENCE and coder_calls < settings.max_steps:
        prompt = build_translation_prompt(current, task)
        candidate: KernelSource | None = None
        report: ExecutionReport | None = None
        response = ""
        accepted = False
        try:
            response = run_coder(prompt)
            candidate = extract_code(response)
            report = verify(candidate)
            accepted = report.correct
        except OrchestratorError as exc:
            report = ExecutionReport(False, False, 0.0, baseline_report.baseline_ms,
                                     error_text=f"transport: {exc}")
        except ExtractionError as exc:
            report = ExecutionReport(False, False, 0.0, baseline_report.baseline_ms,
                                     error_text=str(exc))
        if accepted and candidate is not None and report is not None:
            current = candidate
            current_report = report
            best_runtime = report.runtime_ms
        steps.append(StepRecord(len(steps), None, "translate", candidate,
                                report, accepted))
        log({"step": len(steps) - 1, "action_text": "translate",
             "prompt_hash": content_hash(prompt),
             "response_hash": content_hash(response) if response else "",
             "compile_ok": bool(report and report.compile_ok),
             "correct": bool(report and report.correct),
             "runtime_ms": report.runtime_ms if report else 0.0,
             "accepted": accepted})

    while coder_calls < settings.max_steps:
        obs = Observation(task=task, current_source=current,
                          step_index=len(history), history=tuple(history),
                          hardware=settings.hardware)
        catalog = enumerate_actions(obs)
        try:
            dist = score_actions(obs, catalog, policy)
        except PolicyBackendError:
            if not settings.fallback_uniform:
                raise
            dist = uniform_distribution(catalog)
        if settings.selection == "sample":
            if settings.temperature != 1.0:
                dist = make_distribution(catalog,
                                         dist.logits / settings.temperature)
            action = sample_action(dist, rng)
        else:
            action = argmax_action(dist)
        if action.kind is ActionKind.STOP:
            steps.append(StepRecord(len(steps), action, "stop", None, None, False))
            log({"step": len(steps) - 1, "action_text": "stop", "prompt_hash": "",
                 "response_hash": "", "compile_ok": None, "correct": None,
                 "runtime_ms": None, "accepted": False})
            break

        action_text = render_action(action)
        feedback = None
        if (last_failure is not None and last_failure[0] == action_text
                and action_text not in feedback_given):
            feedback = last_failure[1]
            feedback_given.add(action_text)
            last_failure = None
        bundle = build_prompt(current, action, bank,
                              examples_per_prompt=settings.examples_per_prompt,
                              feedback=feedback)
        candidate = None
        response = ""
        try:
            response = run_coder(bundle.assembled)
            candidate = extract_code(response)
            report = verify(candidate)
        except OrchestratorError as exc:
            report = ExecutionReport(False, False, 0.0, baseline_report.baseline_ms,
                                     error_text=f"transport: {exc}")
        except ExtractionError as exc:
            report = ExecutionReport(False, False, 0.0, baseline_report.baseline_ms,
                                     error_text=str(exc))

        accepted = bool(report.correct and report.runtime_ms < best_runtime)
        if accepted and candidate is not None:
            reward = compute_reward(current_report, report, len(history),
                                    settings.reward_config)
            current = candidate
            current_report = report
            best_runtime = report.runtime_ms
            summary = f"improved runtime={report.runtime_ms:.4f}"
        else:
            reward = compute_reward(current_report, report, len(history),
                                    settings.reward_config)
            if not report.compile_ok:
                summary = "compile failed"
                last_failure = (action_text, report.error_text or "compile failed")
            elif not report.correct:
                summary = "incorrect output"
                last_failure = (action_text, report.error_text or "incorrect output")
            else:
                summary = f"no gain runtime={report.runtime_ms:.4f}"
        history.append(HistoryEntry(action=action, reward=reward, summary=summary))
        steps.append(StepRecord(len(steps), action, action_text, candidate,
                                report, accepted))
        log({"step": len(steps) - 1, "action_text": action_text,
             "prompt_hash": content_hash(bundle.assembled),
             "response_hash": content_hash(response) if response else "",
             "compile_ok": report.compile_ok, "correct": report.correct,
             "runtime_ms": report.runtime_ms, "accepted": accepted})

    accepted_speedups = [s.report.speedup for s in steps
                         if s.accepted and s.report is not None]
    best_speedup = max(accepted_speedups, default=0.0)
    return OptimizationResult(
        task_id=task.task_id, final_source=current, final_report=current_report,
        steps=tuple(steps), best_speedup=best_speedup)


def make_episode_file_logger(path: str | Path) -> EpisodeLogger:
    """Append-only JSONL episode log writer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")

    def _log(record: dict[str, Any]) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    return _log
