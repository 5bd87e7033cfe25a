"""Line-delimited request/response loop on standard streams.

One JSON record per line; every request line produces exactly one response
line echoing the request_id, version-stamped ``v: 1``, even when the request
is malformed or the evaluation blows up. Unknown request fields are ignored.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TextIO

from .executor import DEFAULT_TIMEOUT_S, compile_kernel, evaluate_full
from .ops import inputs_digest

PROTOCOL_VERSION = 1


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def resolve_device(requested: str) -> str:
    """auto|cpu|gpu -> the device this process will actually use."""
    if requested == "cpu":
        return "cpu"
    try:
        import torch

        has_gpu = torch.cuda.is_available()
    except Exception:
        has_gpu = False
    if requested == "gpu":
        return "gpu" if has_gpu else "cpu"
    return "gpu" if has_gpu else "cpu"


@dataclass
class RunnerSettings:
    device: str = "cpu"
    mock_table: dict[str, Any] | None = None
    default_timeout_s: float = DEFAULT_TIMEOUT_S

    @property
    def mode_stamp(self) -> str:
        return "mock" if self.mock_table is not None else self.device


def load_mock_table(path: str | Path) -> dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "entries" not in data or not isinstance(data["entries"], dict):
        raise ValueError(f"mock cost table {path} must carry an 'entries' map")
    return data


def _response_skeleton(request_id: Any, settings: RunnerSettings) -> dict[str, Any]:
    return {
        "v": PROTOCOL_VERSION,
        "request_id": request_id,
        "compile_ok": False,
        "correct": False,
        "runtime_ms": 0.0,
        "baseline_ms": 0.0,
        "max_abs_err": None,
        "error_text": None,
        "device": settings.mode_stamp,
    }


def _mock_response(request: dict[str, Any],
                   settings: RunnerSettings) -> dict[str, Any]:
    table = settings.mock_table
    assert table is not None
    entries = table["entries"]
    default = table.get("default", {"compile_ok": False, "correct": False,
                                    "runtime_ms": 0.0,
                                    "error_text": "unknown source hash"})
    outcome = entries.get(content_hash(str(request.get("candidate_source", ""))),
                          default)
    reference = entries.get(content_hash(str(request.get("reference_source", ""))))
    baseline = float(reference["runtime_ms"]) if reference else \
        float(table.get("default_baseline_ms", 1.0))
    response = _response_skeleton(request.get("request_id"), settings)
    response.update({
        "compile_ok": bool(outcome.get("compile_ok")),
        "correct": bool(outcome.get("correct")),
        "runtime_ms": float(outcome.get("runtime_ms", 0.0)),
        "baseline_ms": baseline,
        "max_abs_err": outcome.get("max_abs_err"),
        "error_text": outcome.get("error_text"),
    })
    return response


def handle_request(request: dict[str, Any],
                   settings: RunnerSettings) -> dict[str, Any]:
    """One request record -> one response record; never raises."""
    response = _response_skeleton(request.get("request_id"), settings)
    try:
        if settings.mock_table is not None:
            response = _mock_response(request, settings)
        else:
            mode = str(request.get("mode", "FULL"))
            candidate = str(request.get("candidate_source", ""))
            input_spec = list(request.get("input_spec") or [])
            if mode == "COMPILE_ONLY":
                _, error = compile_kernel(candidate, len(input_spec))
                response["compile_ok"] = error is None
                response["error_text"] = error
            elif mode == "FULL":
                reference = str(request.get("reference_source", ""))
                if not reference or not input_spec:
                    response["error_text"] = ("FULL mode requires "
                                              "reference_source and input_spec")
                    return response
                timing = request.get("timing") or {}
                tolerance = request.get("tolerance") or {}
                outcome = evaluate_full(
                    candidate, reference, input_spec,
                    warmup=int(timing.get("warmup", 3)),
                    iters=int(timing.get("iters", 10)),
                    atol=float(tolerance.get("atol", 1e-2)),
                    rtol=float(tolerance.get("rtol", 1e-2)),
                    device=settings.device,
                    timeout_s=float(request.get("timeout_s",
                                                settings.default_timeout_s)))
                response.update({
                    "compile_ok": outcome.compile_ok,
                    "correct": outcome.correct,
                    "runtime_ms": outcome.runtime_ms,
                    "baseline_ms": outcome.baseline_ms,
                    "max_abs_err": outcome.max_abs_err,
                    "error_text": outcome.error_text,
                })
            else:
                response["error_text"] = f"unknown mode {mode!r}"
        if request.get("echo_input_digest"):
            response["input_digest"] = inputs_digest(
                list(request.get("input_spec") or []))
    except Exception as exc:  # protocol totality: respond, never crash
        response["correct"] = False
        response["error_text"] = f"internal error: {exc}"
    return response


def serve(settings: RunnerSettings, stdin: TextIO | None = None,
          stdout: TextIO | None = None) -> int:
    """Blocking request loop; returns when stdin closes."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except Exception as exc:
            response = _response_skeleton(None, settings)
            response["error_text"] = f"malformed request: {exc}"
        else:
            response = handle_request(request, settings)
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()
    return 0
