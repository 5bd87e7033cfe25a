"""Shared data model: tasks, hardware, sources, actions, execution outcomes.

All types are immutable after construction and may be shared freely between
concurrent workers. On-disk representations are UTF-8 JSON documents; the
schemas are documented in the README (suite files, hardware files).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable


class SchemaError(ValueError):
    """A value or file record violates the data-model schema.

    ``record`` and ``field_name`` locate the offender when known.
    """

    def __init__(self, message: str, *, record: str | None = None,
                 field_name: str | None = None):
        parts = []
        if record is not None:
            parts.append(f"record {record!r}")
        if field_name is not None:
            parts.append(f"field {field_name!r}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message)
        self.record = record
        self.field_name = field_name


class Suite(str, enum.Enum):
    KB_L1 = "KB-L1"
    KB_L2 = "KB-L2"
    KB_L3 = "KB-L3"
    TB_G = "TB-G"
    TB_T = "TB-T"
    CUSTOM = "CUSTOM"


class SourceLanguage(str, enum.Enum):
    REFERENCE = "REFERENCE"
    KERNEL_DSL = "KERNEL_DSL"


class ActionKind(str, enum.Enum):
    # Definition order is the canonical catalog order; STOP sorts last.
    TILING = "TILING"
    FUSION = "FUSION"
    PIPELINE = "PIPELINE"
    REORDERING = "REORDERING"
    STOP = "STOP"


KIND_ORDER = {kind: i for i, kind in enumerate(ActionKind)}


def content_hash(text: str) -> str:
    """Stable fingerprint of a source text (sha256 hex of the UTF-8 bytes)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TensorSpec:
    """Shape + dtype + generation seed for one kernel input."""

    shape: tuple[int, ...]
    dtype: str
    seed: int

    def __post_init__(self):
        for dim in self.shape:
            if dim < 1:
                raise SchemaError(f"shape dimension {dim} must be >= 1",
                                  field_name="shape")
        if not self.dtype:
            raise SchemaError("dtype must be non-empty", field_name="dtype")

    def to_dict(self) -> dict[str, Any]:
        return {"shape": list(self.shape), "dtype": self.dtype, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TensorSpec":
        try:
            return cls(shape=tuple(int(x) for x in d["shape"]),
                       dtype=str(d["dtype"]), seed=int(d["seed"]))
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r} in input_spec entry",
                              field_name=str(exc.args[0])) from exc


@dataclass(frozen=True)
class KernelTask:
    """One benchmark problem: what to compute and how to generate inputs."""

    task_id: str
    description: str
    reference_source: str
    input_spec: tuple[TensorSpec, ...]
    suite: Suite

    def __post_init__(self):
        if not self.task_id:
            raise SchemaError("task_id must be non-empty", field_name="task_id")
        if not self.input_spec:
            raise SchemaError("input_spec must be non-empty",
                              record=self.task_id, field_name="input_spec")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "reference_source": self.reference_source,
            "input_spec": [t.to_dict() for t in self.input_spec],
            "suite": self.suite.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KernelTask":
        record = str(d.get("task_id", "<missing task_id>"))
        for key in ("task_id", "description", "reference_source", "input_spec", "suite"):
            if key not in d:
                raise SchemaError("missing field", record=record, field_name=key)
        try:
            suite = Suite(d["suite"])
        except ValueError as exc:
            raise SchemaError(f"unknown suite {d['suite']!r}",
                              record=record, field_name="suite") from exc
        return cls(
            task_id=str(d["task_id"]),
            description=str(d["description"]),
            reference_source=str(d["reference_source"]),
            input_spec=tuple(TensorSpec.from_dict(t) for t in d["input_spec"]),
            suite=suite,
        )


_HARDWARE_NUMERIC_FIELDS = (
    "sm_count", "global_memory_gb", "shared_memory_per_sm_kb", "l2_cache_mb",
    "memory_bandwidth_gbps", "fp32_tflops",
)


@dataclass(frozen=True)
class HardwareSpec:
    """Feature summary of one GPU platform."""

    name: str
    architecture: str
    sm_count: int
    global_memory_gb: float
    shared_memory_per_sm_kb: float
    l2_cache_mb: float
    memory_bandwidth_gbps: float
    fp32_tflops: float

    def __post_init__(self):
        for key in _HARDWARE_NUMERIC_FIELDS:
            value = getattr(self, key)
            if not value > 0:
                raise SchemaError(f"{key}={value} must be strictly positive",
                                  record=self.name, field_name=key)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "architecture": self.architecture,
            "sm_count": self.sm_count,
            "global_memory_gb": self.global_memory_gb,
            "shared_memory_per_sm_kb": self.shared_memory_per_sm_kb,
            "l2_cache_mb": self.l2_cache_mb,
            "memory_bandwidth_gbps": self.memory_bandwidth_gbps,
            "fp32_tflops": self.fp32_tflops,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HardwareSpec":
        record = str(d.get("name", "<unnamed hardware>"))
        for key in ("name", "architecture", *_HARDWARE_NUMERIC_FIELDS):
            if key not in d:
                raise SchemaError("missing field", record=record, field_name=key)
        return cls(
            name=str(d["name"]),
            architecture=str(d["architecture"]),
            sm_count=int(d["sm_count"]),
            global_memory_gb=float(d["global_memory_gb"]),
            shared_memory_per_sm_kb=float(d["shared_memory_per_sm_kb"]),
            l2_cache_mb=float(d["l2_cache_mb"]),
            memory_bandwidth_gbps=float(d["memory_bandwidth_gbps"]),
            fp32_tflops=float(d["fp32_tflops"]),
        )


@dataclass(frozen=True)
class KernelSource:
    """A kernel program text, tagged with the language it is written in.

    ``line_count`` is derived from the text and never supplied by callers.
    """

    language: SourceLanguage
    text: str
    line_count: int = field(init=False)

    def __post_init__(self):
        if not self.text:
            raise SchemaError("source text must be non-empty", field_name="text")
        object.__setattr__(self, "line_count", len(self.text.splitlines()))

    def to_dict(self) -> dict[str, Any]:
        return {"language": self.language.value, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KernelSource":
        return cls(language=SourceLanguage(d["language"]), text=str(d["text"]))


@dataclass(frozen=True)
class CodeRegion:
    """1-based inclusive line span inside a kernel source."""

    start_line: int
    end_line: int
    label: str | None = None

    def __post_init__(self):
        if not (1 <= self.start_line <= self.end_line):
            raise SchemaError(
                f"invalid region ({self.start_line}, {self.end_line}): "
                "need 1 <= start_line <= end_line")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_line, self.end_line)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"start_line": self.start_line, "end_line": self.end_line}
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CodeRegion":
        return cls(start_line=int(d["start_line"]), end_line=int(d["end_line"]),
                   label=d.get("label"))


@dataclass(frozen=True)
class OptimizationAction:
    """Semantic optimization action: a kind plus a target region.

    The terminal STOP action carries no region; every other kind must.
    """

    kind: ActionKind
    region: CodeRegion | None = None

    def __post_init__(self):
        if self.kind is ActionKind.STOP:
            if self.region is not None:
                raise SchemaError("STOP action must not carry a region")
        elif self.region is None:
            raise SchemaError(f"{self.kind.value} action requires a region")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        if self.region is None:
            return (KIND_ORDER[self.kind], 0, 0)
        return (KIND_ORDER[self.kind], self.region.start_line, self.region.end_line)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.region is not None:
            d["region"] = self.region.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OptimizationAction":
        region = d.get("region")
        return cls(kind=ActionKind(d["kind"]),
                   region=CodeRegion.from_dict(region) if region else None)


STOP_ACTION = OptimizationAction(ActionKind.STOP)


@dataclass(frozen=True)
class ExecutionReport:
    """Compile/correctness/timing outcome for one candidate on one target.

    ``runtime_ms`` is meaningful only when ``correct``; ``baseline_ms`` is the
    reference implementation's time on the same target.
    """

    compile_ok: bool
    correct: bool
    runtime_ms: float
    baseline_ms: float
    error_text: str | None = None

    def __post_init__(self):
        if self.correct and not self.compile_ok:
            raise SchemaError("correct report requires compile_ok")
        if self.runtime_ms < 0 or self.baseline_ms < 0:
            raise SchemaError("runtime_ms and baseline_ms must be nonnegative")
        if self.correct and (self.runtime_ms <= 0 or self.baseline_ms <= 0):
            raise SchemaError("correct report requires positive runtime_ms "
                              "and baseline_ms")

    @property
    def speedup(self) -> float:
        """baseline_ms / runtime_ms when correct, else 0."""
        if not self.correct:
            return 0.0
        return self.baseline_ms / self.runtime_ms

    def to_dict(self) -> dict[str, Any]:
        return {
            "compile_ok": self.compile_ok,
            "correct": self.correct,
            "runtime_ms": self.runtime_ms,
            "baseline_ms": self.baseline_ms,
            "error_text": self.error_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecutionReport":
        return cls(compile_ok=bool(d["compile_ok"]), correct=bool(d["correct"]),
                   runtime_ms=float(d["runtime_ms"]),
                   baseline_ms=float(d["baseline_ms"]),
                   error_text=d.get("error_text"))


@dataclass(frozen=True)
class HistoryEntry:
    """One past step as seen by the policy: what was tried and how it went."""

    action: OptimizationAction
    reward: float
    summary: str

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.to_dict(), "reward": self.reward,
                "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HistoryEntry":
        return cls(action=OptimizationAction.from_dict(d["action"]),
                   reward=float(d["reward"]), summary=str(d["summary"]))


@dataclass(frozen=True)
class Observation:
    """Policy input: the task, the current kernel state, and the step history."""

    task: KernelTask
    current_source: KernelSource
    step_index: int
    history: tuple[HistoryEntry, ...]
    hardware: HardwareSpec

    def __post_init__(self):
        if len(self.history) != self.step_index:
            raise SchemaError(
                f"history length {len(self.history)} must equal "
                f"step_index {self.step_index}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "current_source": self.current_source.to_dict(),
            "step_index": self.step_index,
            "history": [h.to_dict() for h in self.history],
            "hardware": self.hardware.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Observation":
        return cls(
            task=KernelTask.from_dict(d["task"]),
            current_source=KernelSource.from_dict(d["current_source"]),
            step_index=int(d["step_index"]),
            history=tuple(HistoryEntry.from_dict(h) for h in d["history"]),
            hardware=HardwareSpec.from_dict(d["hardware"]),
        )


def parse_task_suite(path: str | Path) -> list[KernelTask]:
    """Load a suite file: a JSON array of task records, order preserved.

    Raises SchemaError naming the offending record/field, including on
    duplicate task ids.
    """
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"suite file is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise SchemaError("suite file must contain a JSON array of task records")
    tasks = [KernelTask.from_dict(d) for d in data]
    seen: set[str] = set()
    for task in tasks:
        if task.task_id in seen:
            raise SchemaError("duplicate task_id", record=task.task_id,
                              field_name="task_id")
        seen.add(task.task_id)
    return tasks


def save_task_suite(tasks: Iterable[KernelTask], path: str | Path) -> None:
    payload = [t.to_dict() for t in tasks]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def parse_hardware_spec(path: str | Path) -> HardwareSpec:
    """Load a hardware descriptor file: a single JSON record with all eight fields."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"hardware file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("hardware file must contain a single JSON record")
    return HardwareSpec.from_dict(data)


def save_hardware_spec(spec: HardwareSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
