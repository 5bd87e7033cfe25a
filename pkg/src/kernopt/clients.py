"""Pluggable coder and runner clients used by the optimization loop.

Every GPU- and model-facing boundary goes through these protocols so the
full pipeline runs and tests at desk scale: table-driven mock runners and
scripted coders stand in for the real endpoint and the real execution
sandbox. The subprocess runner client speaks the line-delimited JSON wire
protocol (one request record in, one response record out, ``v: 1``).
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .model import (
    ExecutionReport,
    KernelSource,
    KernelTask,
    content_hash,
)

PROTOCOL_VERSION = 1


class CoderTransportError(RuntimeError):
    """Transient coder endpoint failure; the caller may retry."""


class RunnerTransportError(RuntimeError):
    """The runner process is unreachable or broke protocol."""


class CoderClient(Protocol):
    def generate(self, prompt: str) -> str:
        ...


class RunnerClient(Protocol):
    def verify(self, candidate: KernelSource, task: KernelTask, *,
               timing: tuple[int, int], tolerance: tuple[float, float]) -> ExecutionReport:
        ...


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


class EchoCoder:
    """Returns the current kernel unchanged (identity pipeline for tests).

    Echoes the first fenced code block of the prompt, which the prompt
    builder guarantees to be the step's input kernel.
    """

    def generate(self, prompt: str) -> str:
        m = _FENCE_RE.search(prompt)
        if m is None:
            return "no code found"
        return f"Unchanged kernel:\n```\n{m.group(1)}```\n"


class ScriptedCoder:
    """Replays a fixed list of responses, one per generate() call.

    When the script runs out the last response repeats, so an over-long
    episode degrades deterministically instead of failing.
    """

    def __init__(self, responses: list[str]):
        if not responses:
            raise ValueError("scripted coder needs at least one response")
        self.responses = list(responses)
        self.calls = 0

    def generate(self, prompt: str) -> str:
        index = min(self.calls, len(self.responses) - 1)
        self.calls += 1
        return self.responses[index]


class FlakyCoder:
    """Wraps another coder and fails the first ``failures`` calls; test aid."""

    def __init__(self, inner: CoderClient, failures: int):
        self.inner = inner
        self.remaining = failures

    def generate(self, prompt: str) -> str:
        if self.remaining > 0:
            self.remaining -= 1
            raise CoderTransportError("injected transport failure")
        return self.inner.generate(prompt)


class HttpChatCoder:
    """Chat-completion-style HTTP endpoint; the API key comes from the
    environment variable only, never from config files."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "CODER_API_KEY",
                 timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def generate(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": self.model,
                "messages": [{"role": "user", "content": prompt}]}
        try:
            resp = requests.post(f"{self.base_url}/chat/completions",
                                 json=body, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise CoderTransportError(f"coder endpoint failed: {exc}") from exc


class HttpTokenScorer:
    """Token-scoring client over a completions endpoint.

    ``score`` asks for echoed token log-probabilities of prompt+continuation
    and slices off the continuation's tokens; endpoints without that
    capability make the policy backend fall back to generate-and-parse.
    """

    def __init__(self, base_url: str, model: str, api_key_env: str = "CODER_API_KEY",
                 timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def score(self, prompt: str, continuation: str):
        import requests

        from .policy import ScoringUnsupported, make_token_score

        body = {"model": self.model, "prompt": prompt + continuation,
                "max_tokens": 0, "echo": True, "logprobs": 0}
        try:
            resp = requests.post(f"{self.base_url}/completions", json=body,
                                 headers=self._headers(), timeout=self.timeout_s)
            resp.raise_for_status()
            choice = resp.json()["choices"][0]
            offsets = choice["logprobs"]["text_offset"]
            tokens = choice["logprobs"]["tokens"]
            logprobs = choice["logprobs"]["token_logprobs"]
        except Exception as exc:
            raise ScoringUnsupported(
                f"endpoint cannot return token scores: {exc}") from exc
        boundary = len(prompt)
        selected = [(t, lp) for off, t, lp in zip(offsets, tokens, logprobs)
                    if off >= boundary and lp is not None]
        if not selected:
            raise ScoringUnsupported("no token scores returned for continuation")
        return make_token_score([t for t, _ in selected], [lp for _, lp in selected])

    def generate(self, prompt: str) -> str:
        import requests

        body = {"model": self.model,
                "messages": [{"role": "user", "content": prompt}]}
        try:
            resp = requests.post(f"{self.base_url}/chat/completions", json=body,
                                 headers=self._headers(), timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise CoderTransportError(f"generation endpoint failed: {exc}") from exc


# --------------------------------------------------------------------------
# Runner clients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MockOutcome:
    compile_ok: bool
    correct: bool
    runtime_ms: float
    error_text: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MockOutcome":
        return cls(compile_ok=bool(d["compile_ok"]), correct=bool(d["correct"]),
                   runtime_ms=float(d.get("runtime_ms", 0.0)),
                   error_text=d.get("error_text"))


_FAIL_OUTCOME = MockOutcome(compile_ok=False, correct=False, runtime_ms=0.0,
                            error_text="unknown source hash")


def load_cost_table(path: str | Path) -> dict[str, Any]:
    """Cost table file: {"entries": {sha256 -> outcome}, "default": outcome?}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "entries" not in data or not isinstance(data["entries"], dict):
        raise ValueError(f"cost table {path} must carry an 'entries' map")
    return data


class MockTableRunner:
    """Deterministic in-process runner: outcomes come from a cost table.

    The table maps source-content hashes (sha256 of the text) to
    {compile_ok, correct, runtime_ms}; the baseline time is the table entry
    of the reference source itself. Unknown hashes get the configured
    default outcome.
    """

    def __init__(self, entries: dict[str, MockOutcome],
                 default: MockOutcome = _FAIL_OUTCOME,
                 default_baseline_ms: float = 1.0):
        self.entries = dict(entries)
        self.default = default
        self.default_baseline_ms = default_baseline_ms

    @classmethod
    def from_file(cls, path: str | Path) -> "MockTableRunner":
        data = load_cost_table(path)
        entries = {h: MockOutcome.from_dict(o) for h, o in data["entries"].items()}
        default = (MockOutcome.from_dict(data["default"])
                   if "default" in data else _FAIL_OUTCOME)
        return cls(entries, default=default,
                   default_baseline_ms=float(data.get("default_baseline_ms", 1.0)))

    def _lookup(self, text: str) -> MockOutcome:
        return self.entries.get(content_hash(text), self.default)

    def verify(self, candidate: KernelSource, task: KernelTask, *,
               timing: tuple[int, int] = (3, 10),
               tolerance: tuple[float, float] = (1e-2, 1e-2)) -> ExecutionReport:
        outcome = self._lookup(candidate.text)
        reference = self.entries.get(content_hash(task.reference_source))
        baseline = reference.runtime_ms if reference else self.default_baseline_ms
        return ExecutionReport(
            compile_ok=outcome.compile_ok, correct=outcome.correct,
            runtime_ms=outcome.runtime_ms if outcome.correct else 0.0,
            baseline_ms=baseline if baseline > 0 else self.default_baseline_ms,
            error_text=outcome.error_text)


class SubprocessRunner:
    """Client side of the runner wire protocol over a child process.

    One JSON record per line on the child's stdin/stdout; responses must
    echo the request_id. The child is restarted if it dies. Calls from
    concurrent tasks are tolerated by serializing the wire exchange; use one
    client (and so one runner process) per worker for real parallelism.
    """

    def __init__(self, command: list[str], timing: tuple[int, int] = (3, 10)):
        if not command:
            raise ValueError("runner command must be non-empty")
        self.command = list(command)
        self._proc: subprocess.Popen | None = None
        self._counter = 0
        self._lock = threading.Lock()

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1)
            except OSError as exc:
                raise RunnerTransportError(
                    f"cannot launch runner {self.command!r}: {exc}") from exc
        return self._proc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def verify(self, candidate: KernelSource, task: KernelTask, *,
               timing: tuple[int, int] = (3, 10),
               tolerance: tuple[float, float] = (1e-2, 1e-2)) -> ExecutionReport:
        with self._lock:
            self._counter += 1
            request = {
                "v": PROTOCOL_VERSION,
                "request_id": f"r{self._counter}",
                "mode": "FULL",
                "candidate_source": candidate.text,
                "reference_source": task.reference_source,
                "input_spec": [t.to_dict() for t in task.input_spec],
                "timing": {"warmup": timing[0], "iters": timing[1]},
                "tolerance": {"atol": tolerance[0], "rtol": tolerance[1]},
            }
            proc = self._ensure_process()
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise RunnerTransportError(f"runner pipe failed: {exc}") from exc
        if not line:
            self.close()
            raise RunnerTransportError("runner closed its output stream")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RunnerTransportError(f"bad runner response: {line!r}") from exc
        if response.get("request_id") != request["request_id"]:
            raise RunnerTransportError(
                f"response id {response.get('request_id')!r} does not match "
                f"request {request['request_id']!r}")
        error_text = response.get("error_text")
        max_abs_err = response.get("max_abs_err")
        if not response.get("correct") and max_abs_err not in (None, 0):
            suffix = f"max_abs_err={max_abs_err}"
            error_text = f"{error_text}; {suffix}" if error_text else suffix
        return ExecutionReport(
            compile_ok=bool(response.get("compile_ok")),
            correct=bool(response.get("correct")),
            runtime_ms=float(response.get("runtime_ms", 0.0)),
            baseline_ms=float(response.get("baseline_ms", 0.0)),
            error_text=error_text)
