from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from kernopt import data_path
from kernopt.model import (
    HardwareSpec,
    KernelSource,
    KernelTask,
    Observation,
    SourceLanguage,
    parse_hardware_spec,
    parse_task_suite,
)

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def hardware() -> HardwareSpec:
    return parse_hardware_spec(data_path("hardware", "h100.json"))


@pytest.fixture(scope="session")
def mini_tasks() -> list[KernelTask]:
    return parse_task_suite(data_path("mini_suite.json"))


@pytest.fixture(scope="session")
def mlp_source() -> KernelSource:
    text = data_path("fixtures", "fixture_mlp.py.txt").read_text(encoding="utf-8")
    return KernelSource(SourceLanguage.REFERENCE, text)


@pytest.fixture
def make_observation(hardware, mini_tasks):
    def _make(source: KernelSource, step_index: int = 0,
              history: tuple = ()) -> Observation:
        return Observation(task=mini_tasks[0], current_source=source,
                           step_index=step_index, history=tuple(history),
                           hardware=hardware)

    return _make
