import json

import pytest

from kernopt import data_path
from kernopt.actions import parse_action_text, render_action
from kernopt.env import (
    OfflineEnv,
    RewardConfig,
    TreeError,
    compute_reward,
    generate_synthetic_tree,
    golden_path,
    load_tree,
    replay_log,
    save_tree,
    stop_reward,
)
from kernopt.model import ExecutionReport

from conftest import GOLDEN_DIR
from oracles import all_path_returns

CFG = RewardConfig()


def make_report(compile_ok=True, correct=True, runtime=1.0, baseline=1.0):
    return ExecutionReport(compile_ok=compile_ok, correct=correct,
                           runtime_ms=runtime if correct else 0.0,
                           baseline_ms=baseline)


@pytest.fixture(scope="module")
def mini_tree():
    return load_tree(data_path("mini_env", "t1.tree"))


def test_mini_tree_shape(mini_tree):
    assert len(mini_tree.nodes) == 13
    assert mini_tree.depth() == 4


def _tree_lines(tree):
    return [json.dumps({"task_id": tree.task.task_id, "root_id": tree.root_id,
                        "task": tree.task.to_dict()}, sort_keys=True)]


def test_load_rejects_incorrect_root(tmp_path, mini_tree):
    lines = _tree_lines(mini_tree)
    lines.append(json.dumps({
        "node_id": "n0", "parent_id": None, "action_text": None,
        "source_text": "a = f(x)", "compile_ok": True, "correct": False,
        "runtime_ms": 0.0, "baseline_ms": 1.0}))
    path = tmp_path / "bad_root.tree"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(TreeError, match="root"):
        load_tree(path)


def test_load_rejects_duplicate_child_action(tmp_path, mini_tree):
    lines = _tree_lines(mini_tree)
    root = {"node_id": "n0", "parent_id": None, "action_text": None,
            "source_text": "a = f(x)\nb = g(a)", "compile_ok": True,
            "correct": True, "runtime_ms": 2.0, "baseline_ms": 2.0}
    child = {"node_id": "n1", "parent_id": "n0", "action_text": "fuse lines 1-2",
             "source_text": "b = fg(x)", "compile_ok": True, "correct": True,
             "runtime_ms": 1.0, "baseline_ms": 2.0}
    twin = dict(child, node_id="n2", source_text="b = gf(x)")
    for rec in (root, child, twin):
        lines.append(json.dumps(rec))
    path = tmp_path / "dup_action.tree"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(TreeError, match="share the incoming action"):
        load_tree(path)


def test_load_rejects_orphan(tmp_path, mini_tree):
    lines = _tree_lines(mini_tree)
    root = {"node_id": "n0", "parent_id": None, "action_text": None,
            "source_text": "a = f(x)", "compile_ok": True, "correct": True,
            "runtime_ms": 2.0, "baseline_ms": 2.0}
    orphan = {"node_id": "n9", "parent_id": "missing",
              "action_text": "fuse lines 1-2", "source_text": "b = g(x)",
              "compile_ok": True, "correct": True, "runtime_ms": 1.0,
              "baseline_ms": 2.0}
    for rec in (root, orphan):
        lines.append(json.dumps(rec))
    path = tmp_path / "orphan.tree"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(TreeError, match="n9"):
        load_tree(path)


def test_reset_observation(mini_tree, hardware):
    env = OfflineEnv(mini_tree, hardware)
    obs = env.reset()
    assert obs.current_source == mini_tree.root.source
    assert obs.step_index == 0
    assert obs.history == ()


def test_step_on_tree_improvement_moves(mini_tree, hardware):
    env = OfflineEnv(mini_tree, hardware)
    env.reset()
    golden = golden_path(mini_tree)
    action = golden[1].incoming_action
    obs, reward, done = env.step(action)
    assert obs.current_source == golden[1].source
    assert reward > 0
    assert not done
    assert obs.step_index == 1
    assert obs.history[0].action == action


def test_stop_at_root_is_zero(mini_tree, hardware):
    env = OfflineEnv(mini_tree, hardware)
    env.reset()
    obs, reward, done = env.step(parse_action_text("stop"))
    assert done
    assert reward == 0.0


def test_off_tree_action_stays_and_penalizes(mini_tree, hardware):
    env = OfflineEnv(mini_tree, hardware)
    first = env.reset()
    obs, reward, done = env.step(parse_action_text("fuse lines 98-99"))
    assert obs.current_source == first.current_source
    assert reward == CFG.r_incorrect  # step 0: no decay yet
    assert not done


def test_step_onto_invalid_child_stays(hardware):
    tree = next(t for t in (generate_synthetic_tree(s, 3, 3) for s in range(20))
                if any(not c.report.correct for c in t.children_of(t.root_id)))
    env = OfflineEnv(tree, hardware)
    start = env.reset()
    broken = next(c for c in tree.children_of(tree.root_id)
                  if not c.report.correct)
    obs, reward, done = env.step(broken.incoming_action)
    assert obs.current_source == start.current_source
    assert reward < 0


def test_episode_always_terminates(mini_tree, hardware):
    env = OfflineEnv(mini_tree, hardware, max_steps=8)
    env.reset()
    done = False
    steps = 0
    while not done:
        _, _, done = env.step(parse_action_text("fuse lines 98-99"))
        steps += 1
        assert steps <= 8
    assert steps == 8


# Hand-computed reward table. The three central rows are the fixed-point
# values -0.6, 1.0, 0.729; the log(1.25) row uses the independently known
# constant log2(1.25) = 0.3219280948873623.
REWARD_TABLE = [
    # (new_report, step, expected)
    (make_report(compile_ok=False, correct=False), 0, -0.6),
    (make_report(compile_ok=True, correct=False), 0, -0.3),
    (make_report(runtime=2.5, baseline=2.0), 0, 0.1),          # slower: no gain
    (make_report(runtime=2.0, baseline=2.0), 0, 0.1),          # equal: no gain
    (make_report(runtime=1.0, baseline=2.0), 0, 1.0),          # halved
    (make_report(runtime=0.5, baseline=2.0), 0, 1.0),          # capped at 1.0
    (make_report(runtime=1.0, baseline=2.0), 3, 0.729),        # decayed
    (make_report(runtime=1.6, baseline=2.0), 0,
     0.5 + 0.5 * 0.3219280948873623),
]


@pytest.mark.parametrize("new,step,expected", REWARD_TABLE)
def test_compute_reward_table(new, step, expected):
    prev = make_report(runtime=2.0, baseline=2.0)
    got = compute_reward(prev, new, step, CFG)
    assert got == pytest.approx(expected, abs=1e-12)


def test_compute_reward_exact_anchor_values():
    prev = make_report(runtime=2.0, baseline=2.0)
    assert compute_reward(prev, make_report(compile_ok=False, correct=False),
                          0, CFG) == -0.6
    assert compute_reward(prev, make_report(runtime=1.0, baseline=2.0),
                          0, CFG) == 1.0
    assert compute_reward(prev, make_report(runtime=1.0, baseline=2.0),
                          3, CFG) == 0.9 ** 3  # 0.729 at float precision


def test_compute_reward_requires_valid_prev():
    bad_prev = make_report(compile_ok=True, correct=False)
    with pytest.raises(ValueError):
        compute_reward(bad_prev, make_report(), 0, CFG)


def test_reward_ordering_at_fixed_step():
    prev = make_report(runtime=2.0, baseline=2.0)
    compile_fail = compute_reward(prev, make_report(False, False), 1, CFG)
    incorrect = compute_reward(prev, make_report(True, False), 1, CFG)
    no_gain = compute_reward(prev, make_report(runtime=2.1, baseline=2.0), 1, CFG)
    tiny_gain = compute_reward(prev, make_report(runtime=1.999, baseline=2.0), 1, CFG)
    assert compile_fail < incorrect < no_gain < tiny_gain


def test_decay_monotonicity():
    prev = make_report(runtime=2.0, baseline=2.0)
    outcomes = [make_report(False, False), make_report(True, False),
                make_report(runtime=1.0, baseline=2.0)]
    for new in outcomes:
        for step in range(7):
            assert abs(compute_reward(prev, new, step + 1, CFG)) <= \
                abs(compute_reward(prev, new, step, CFG))


def test_stop_reward_tracks_overall_speedup():
    root = make_report(runtime=4.0, baseline=4.0)
    current = make_report(runtime=1.0, baseline=4.0)
    assert stop_reward(root, current, 0, CFG) == 3.0
    assert stop_reward(root, current, 2, CFG) == pytest.approx(3.0 * 0.81)
    assert stop_reward(root, root, 5, CFG) == 0.0


def test_synthetic_tree_determinism(tmp_path):
    a, b = tmp_path / "a.tree", tmp_path / "b.tree"
    save_tree(generate_synthetic_tree(7, 3, 2), a)
    save_tree(generate_synthetic_tree(7, 3, 2), b)
    assert a.read_bytes() == b.read_bytes()


def test_synthetic_tree_root_is_valid():
    tree = generate_synthetic_tree(3, 2, 2)
    assert tree.root.report.correct and tree.root.report.compile_ok


def test_synthetic_golden_path_strictly_improves():
    tree = generate_synthetic_tree(5, 4, 3)
    path = golden_path(tree)
    assert len(path) == 5
    runtimes = [n.report.runtime_ms for n in path]
    assert all(a > b for a, b in zip(runtimes, runtimes[1:]))


def test_golden_path_beats_every_other_path():
    for seed in (1, 7, 13):
        tree = generate_synthetic_tree(seed, 3, 3)
        returns = all_path_returns(tree, CFG)
        leaf = golden_path(tree)[-1].node_id
        best = returns.pop(leaf)
        assert all(best > other for other in returns.values()), seed


def test_tree_file_round_trip(tmp_path):
    tree = generate_synthetic_tree(9, 3, 2)
    path = tmp_path / "t.tree"
    save_tree(tree, path)
    loaded = load_tree(path)
    assert loaded.task == tree.task
    assert loaded.root_id == tree.root_id
    assert set(loaded.nodes) == set(tree.nodes)
    for node_id, node in tree.nodes.items():
        other = loaded.nodes[node_id]
        assert other.report == node.report
        assert other.source.text == node.source.text
        assert other.parent_id == node.parent_id


def test_replay_is_deterministic(mini_tree, hardware):
    script = json.loads((GOLDEN_DIR / "replay_actions.json").read_text())
    first = replay_log(mini_tree, hardware, script)
    second = replay_log(mini_tree, hardware, script)
    assert first == second


def test_stored_edges_are_always_enumerable(make_observation):
    # Every stored edge must be offered by the action catalog of its parent
    # node, otherwise the policy could never take it.
    from kernopt.actions import enumerate_actions

    tree = generate_synthetic_tree(21, 3, 3)
    for node in tree.nodes.values():
        children = tree.children_of(node.node_id)
        if not children:
            continue
        obs = make_observation(node.source)
        offered = {render_action(a) for a in enumerate_actions(obs).actions}
        for child in children:
            assert render_action(child.incoming_action) in offered
