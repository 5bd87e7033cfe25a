#!/usr/bin/env python3
"""Regenerate the bundled deterministic fixtures and the committed goldens.

Run from the repository root after an intentional behavior change:

    python3 scripts/make_fixtures.py

Outputs:
  src/kernopt/data/mini_env/t1.tree          bundled offline-env tree
  src/kernopt/data/scripted/coder_script.json  per-task scripted coder responses
  src/kernopt/data/scripted/cost_table.json  source-hash -> outcome table
  src/kernopt/data/configs/mock_eval.json    ready-to-run mock pipeline config
  tests/golden/replay_actions.json           fixed env action script
  tests/golden/replay_log.golden.jsonl       frozen replay rendering
  tests/golden/report.golden.json            frozen mock benchmark report
  tests/golden/report.golden.txt             frozen rendered table
  tests/golden/result_t1.golden.json         frozen single-task result file

The numeric expectations encoded here (speedups 2/1/1/4/1, mean 1.8,
fast_1=0.4, fast_2=0.2) are asserted independently by the test suite; this
script only lays out the bytes.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from kernopt.actions import render_action  # noqa: E402
from kernopt.env import generate_synthetic_tree, golden_path, replay_log, \
    save_tree  # noqa: E402
from kernopt.model import content_hash, parse_hardware_spec, parse_task_suite  # noqa: E402

DATA = ROOT / "src" / "kernopt" / "data"
GOLDEN = ROOT / "tests" / "golden"

MINI_TREE_SEED = 11
BASELINES = {"t1": 2.0, "t2": 1.5, "t3": 3.0, "t4": 4.0, "t5": 1.0}


def fenced(text: str, chatter: str = "Updated kernel:") -> str:
    return f"{chatter}\n```\n{text}\n```\n"


def make_mini_tree() -> None:
    tree = generate_synthetic_tree(MINI_TREE_SEED, depth=4, branching=3)
    assert len(tree.nodes) == 13, f"expected 13 nodes, got {len(tree.nodes)}"
    assert tree.depth() == 4
    (DATA / "mini_env").mkdir(parents=True, exist_ok=True)
    save_tree(tree, DATA / "mini_env" / "t1.tree")


def make_replay_fixture() -> None:
    tree = generate_synthetic_tree(MINI_TREE_SEED, depth=4, branching=3)
    hardware = parse_hardware_spec(DATA / "hardware" / "h100.json")
    path = golden_path(tree)
    golden_edges = [render_action(node.incoming_action) for node in path[1:]]
    # An action text guaranteed off-tree at the second state: reuse the root
    # golden edge, which the shorter child chain cannot offer again.
    script = [golden_edges[0], "fuse lines 98-99", golden_edges[1],
              golden_edges[2], "stop"]
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "replay_actions.json").write_text(
        json.dumps(script, indent=2) + "\n", encoding="utf-8")
    log = replay_log(tree, hardware, script)
    (GOLDEN / "replay_log.golden.jsonl").write_text(log, encoding="utf-8")


def make_scripted_pipeline() -> None:
    tasks = {t.task_id: t for t in parse_task_suite(DATA / "mini_suite.json")}
    entries: dict[str, dict] = {}
    script: dict[str, list[str]] = {}

    def add(text: str, compile_ok: bool, correct: bool, runtime_ms: float,
            error_text: str | None = None) -> str:
        entry: dict = {"compile_ok": compile_ok, "correct": correct,
                       "runtime_ms": runtime_ms}
        if error_text is not None:
            entry["error_text"] = error_text
        entries[content_hash(text)] = entry
        return text

    translated: dict[str, str] = {}
    for task_id, task in tasks.items():
        add(task.reference_source, True, True, BASELINES[task_id])
        translated[task_id] = add("# kernel-dsl\n" + task.reference_source,
                                  True, True, BASELINES[task_id])

    # t1: one accepted improvement (2.0 -> 1.0), then a non-improving rewrite.
    t1_fast = add("h = matmul_add(in0, in1, in2)\na = relu(h)\n"
                  "out = reduce_max(a)\nreturn out", True, True, 1.0)
    t1_slow = add("h = matmul(in0, in1)\nha = add_relu(h, in2)\n"
                  "out = reduce_max(ha)\nreturn out", True, True, 1.2)
    script["t1"] = [fenced(translated["t1"], "Faithful translation:"),
                    fenced(t1_fast), fenced(t1_slow)]

    # t2: the coder keeps returning the unchanged kernel; nothing improves.
    script["t2"] = [fenced(translated["t2"], "Faithful translation:"),
                    fenced(translated["t2"]), fenced(translated["t2"])]

    # t3: a compile failure, then a prose-only response (extraction failure).
    t3_broken = add("a = mul(in0, in0\nbroken(", False, False, 0.0,
                    error_text="unbalanced parenthesis")
    script["t3"] = [fenced(translated["t3"], "Faithful translation:"),
                    fenced(t3_broken),
                    "I could not produce a safe edit for this step."]

    # t4: two accepted improvements (4.0 -> 2.0 -> 1.0).
    t4_mid = add("h = matmul_relu(in0, in1)\ny = matmul(h, in2)\n"
                 "out = reduce_sum(y)\nreturn out", True, True, 2.0)
    t4_best = add("y = mlp_fused(in0, in1, in2)\nout = reduce_sum(y)\nreturn out",
                  True, True, 1.0)
    script["t4"] = [fenced(translated["t4"], "Faithful translation:"),
                    fenced(t4_mid), fenced(t4_best)]

    # t5: candidates run but give wrong answers; both rejected.
    t5_wrong = add("y = matmul(in0, in1)\nout = reduce_max(y)\nreturn out",
                   True, False, 0.0, error_text="output mismatch")
    script["t5"] = [fenced(translated["t5"], "Faithful translation:"),
                    fenced(t5_wrong), fenced(t5_wrong)]

    scripted = DATA / "scripted"
    scripted.mkdir(parents=True, exist_ok=True)
    (scripted / "coder_script.json").write_text(
        json.dumps(script, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (scripted / "cost_table.json").write_text(
        json.dumps({"entries": entries,
                    "default": {"compile_ok": False, "correct": False,
                                "runtime_ms": 0.0,
                                "error_text": "unknown source hash"}},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")


def make_mock_config() -> None:
    config = {
        "seed": 0,
        "max_steps": 3,
        "parallelism": 1,
        "suite_label": "CUSTOM",
        "paths": {
            "suite": "../mini_suite.json",
            "hardware": "../hardware/h100.json",
            "example_bank": "../example_bank",
        },
        "policy": {"backend": "uniform"},
        "coder": {"mode": "scripted", "script": "../scripted/coder_script.json"},
        "runner": {"mode": "mock", "cost_table": "../scripted/cost_table.json"},
        "fast_p": [1, 2],
    }
    (DATA / "configs").mkdir(parents=True, exist_ok=True)
    (DATA / "configs" / "mock_eval.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def make_cli_goldens() -> None:
    """Freeze the mock pipeline's report/result bytes via the real CLI."""
    import tempfile

    config = DATA / "configs" / "mock_eval.json"
    with tempfile.TemporaryDirectory() as tmp:
        env_cmd = [sys.executable, "-m", "kernopt.cli", "--config", str(config),
                   "--out-dir", tmp, "eval"]
        subprocess.run(env_cmd, check=True, cwd=ROOT,
                       env={"PYTHONPATH": str(ROOT / "src"), "PATH": "/usr/bin:/bin"})
        (GOLDEN / "report.golden.json").write_bytes(
            (Path(tmp) / "report.json").read_bytes())
        (GOLDEN / "report.golden.txt").write_bytes(
            (Path(tmp) / "report.txt").read_bytes())
    with tempfile.TemporaryDirectory() as tmp:
        env_cmd = [sys.executable, "-m", "kernopt.cli", "--config", str(config),
                   "--out-dir", tmp, "optimize", "t1"]
        subprocess.run(env_cmd, check=True, cwd=ROOT,
                       env={"PYTHONPATH": str(ROOT / "src"), "PATH": "/usr/bin:/bin"})
        (GOLDEN / "result_t1.golden.json").write_bytes(
            (Path(tmp) / "result_t1.json").read_bytes())


def main() -> None:
    make_mini_tree()
    make_replay_fixture()
    make_scripted_pipeline()
    make_mock_config()
    make_cli_goldens()
    print("fixtures written")


if __name__ == "__main__":
    main()
