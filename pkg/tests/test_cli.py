import json
from pathlib import Path

import pytest

from kernopt import data_path
from kernopt.cli import main
from kernopt.env import RewardConfig, load_tree
from conftest import GOLDEN_DIR
from oracles import best_tree_return

MOCK_CONFIG = data_path("configs", "mock_eval.json")


def run(argv) -> int:
    return main([str(a) for a in argv])


# --------------------------------------------------------------------------
# gen-env
# --------------------------------------------------------------------------

def test_gen_env_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--seed", 7, "gen-env", "--depth", 3, "--branching", 2,
                "--out", a]) == 0
    assert run(["--seed", 7, "gen-env", "--depth", 3, "--branching", 2,
                "--out", b]) == 0
    assert (a / "synth_7.tree").read_bytes() == (b / "synth_7.tree").read_bytes()


def test_gen_env_depth_one_shape(tmp_path):
    assert run(["--seed", 3, "gen-env", "--depth", 1, "--branching", 4,
                "--out", tmp_path]) == 0
    tree = load_tree(tmp_path / "synth_3.tree")
    assert len(tree.nodes) == 1 + 4
    assert tree.depth() == 1


def test_gen_env_output_passes_validation(tmp_path):
    assert run(["--seed", 1, "gen-env", "--count", 3, "--out", tmp_path]) == 0
    files = sorted(tmp_path.glob("*.tree"))
    assert len(files) == 3
    for path in files:
        load_tree(path)  # raises on any invariant breach


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def write_train_config(tmp_path: Path, dataset: Path, **overrides) -> Path:
    config = {
        "seed": 7,
        "max_steps": 8,
        "paths": {
            "env_dataset": str(dataset),
            "hardware": str(data_path("hardware", "h100.json")),
            "out_dir": str(tmp_path / "out"),
        },
    }
    config.update(overrides)
    path = tmp_path / "train.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.mark.slow
def test_train_reaches_oracle_and_is_deterministic(tmp_path, capsys):
    dataset = tmp_path / "envs"
    assert run(["--seed", 7, "gen-env", "--depth", 3, "--branching", 3,
                "--out", dataset]) == 0
    config = write_train_config(tmp_path, dataset)

    assert run(["--config", config, "train"]) == 0
    out_dir = tmp_path / "out"
    log_a = (out_dir / "train_log.jsonl").read_bytes()
    checkpoint = json.loads((out_dir / "checkpoint.json").read_text())
    assert checkpoint["version"] == 1
    assert checkpoint["config_hash"]

    tree = load_tree(dataset / "synth_7.tree")
    oracle = best_tree_return(tree, RewardConfig(), 8)
    final = json.loads(log_a.decode().splitlines()[-1])
    assert final["mean_return"] >= 0.9 * oracle

    assert run(["--config", config, "train"]) == 0
    log_b = (out_dir / "train_log.jsonl").read_bytes()
    assert log_a == log_b


def test_train_missing_dataset_exits_2(tmp_path, capsys):
    config = write_train_config(tmp_path, tmp_path / "nowhere")
    assert run(["--config", config, "train"]) == 2
    assert "nowhere" in capsys.readouterr().err


# --------------------------------------------------------------------------
# optimize
# --------------------------------------------------------------------------

def test_optimize_matches_golden_result(tmp_path):
    out = tmp_path / "out"
    assert run(["--config", MOCK_CONFIG, "--out-dir", out, "optimize", "t1"]) == 0
    produced = (out / "result_t1.json").read_bytes()
    assert produced == (GOLDEN_DIR / "result_t1.golden.json").read_bytes()
    episode = (out / "episode_t1.jsonl").read_text().splitlines()
    assert len(episode) >= 3
    assert json.loads(episode[0])["action_text"] == "verify"


def test_optimize_unknown_task_exits_2(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["--config", MOCK_CONFIG, "--out-dir", out,
                "optimize", "missing-task"]) == 2
    assert "missing-task" in capsys.readouterr().err


def test_optimize_max_steps_zero_returns_start(tmp_path):
    config = json.loads(MOCK_CONFIG.read_text())
    config["max_steps"] = 0
    config["paths"] = {
        key: str((MOCK_CONFIG.parent / value).resolve())
        for key, value in config["paths"].items()
    }
    config["coder"]["script"] = str(
        (MOCK_CONFIG.parent / config["coder"]["script"]).resolve())
    config["runner"]["cost_table"] = str(
        (MOCK_CONFIG.parent / config["runner"]["cost_table"]).resolve())
    path = tmp_path / "frozen.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    out = tmp_path / "out"
    assert run(["--config", path, "--out-dir", out, "optimize", "t1"]) == 0
    result = json.loads((out / "result_t1.json").read_text())
    assert len(result["steps"]) == 1
    assert result["best_speedup"] == 1.0
    assert result["final_source"]["language"] == "REFERENCE"


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def test_eval_report_matches_golden_bytes(tmp_path):
    out = tmp_path / "out"
    assert run(["--config", MOCK_CONFIG, "--out-dir", out, "eval"]) == 0
    assert (out / "report.json").read_bytes() == \
        (GOLDEN_DIR / "report.golden.json").read_bytes()
    assert (out / "report.txt").read_bytes() == \
        (GOLDEN_DIR / "report.golden.txt").read_bytes()


def test_eval_repeat_runs_are_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["--config", MOCK_CONFIG, "--out-dir", out_a, "eval"]) == 0
    assert run(["--config", MOCK_CONFIG, "--out-dir", out_b, "eval"]) == 0
    assert (out_a / "report.json").read_bytes() == \
        (out_b / "report.json").read_bytes()


def test_eval_empty_suite_exits_2(tmp_path, capsys):
    empty = tmp_path / "empty_suite.json"
    empty.write_text("[]", encoding="utf-8")
    config = json.loads(MOCK_CONFIG.read_text())
    base = MOCK_CONFIG.parent
    config["paths"]["suite"] = str(empty)
    config["paths"]["hardware"] = str((base / config["paths"]["hardware"]).resolve())
    config["paths"]["example_bank"] = str(
        (base / config["paths"]["example_bank"]).resolve())
    config["coder"]["script"] = str((base / config["coder"]["script"]).resolve())
    config["runner"]["cost_table"] = str(
        (base / config["runner"]["cost_table"]).resolve())
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    assert run(["--config", path, "--out-dir", tmp_path / "out", "eval"]) == 2


def test_eval_tolerance_override_lands_in_report(tmp_path):
    config = json.loads(MOCK_CONFIG.read_text())
    base = MOCK_CONFIG.parent
    for key, value in list(config["paths"].items()):
        config["paths"][key] = str((base / value).resolve())
    config["coder"]["script"] = str((base / config["coder"]["script"]).resolve())
    config["runner"]["cost_table"] = str(
        (base / config["runner"]["cost_table"]).resolve())
    config["tolerance"] = {"atol": 0.5, "rtol": 0.25}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    out = tmp_path / "out"
    assert run(["--config", path, "--out-dir", out, "eval"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["tolerance"] == {"atol": 0.5, "rtol": 0.25}


def test_missing_config_exits_2(capsys):
    assert run(["eval"]) == 2
    assert "config" in capsys.readouterr().err.lower()
