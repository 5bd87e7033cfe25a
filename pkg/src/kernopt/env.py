"""Offline tree-structured RL environment over trajectory datasets.

A trajectory tree stores kernel variants as nodes and optimization actions
as edges; episodes replay stored outcomes instead of calling a code
generator, so policy training needs neither a GPU nor a model endpoint.
Includes the rule-based shaped reward and a synthetic tree generator for
desk-scale training and tests.

Tree file format (one JSON record per line):
  header: {"task_id", "root_id", "task"?}   -- "task" is the full task record
  node:   {"node_id", "parent_id", "action_text", "source_text",
           "compile_ok", "correct", "runtime_ms", "baseline_ms"}
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .actions import parse_action_text, render_action
from .model import (
    ExecutionReport,
    HardwareSpec,
    HistoryEntry,
    KernelSource,
    KernelTask,
    Observation,
    OptimizationAction,
    ActionKind,
    SourceLanguage,
    Suite,
    TensorSpec,
    content_hash,
)


class TreeError(ValueError):
    """A trajectory tree file or structure is invalid; names the node."""

    def __init__(self, message: str, node_id: str | None = None):
        if node_id is not None:
            message = f"{message} (node {node_id!r})"
        super().__init__(message)
        self.node_id = node_id


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrajectoryNode:
    node_id: str
    parent_id: str | None
    incoming_action: OptimizationAction | None
    source: KernelSource
    report: ExecutionReport


@dataclass(frozen=True)
class TrajectoryTree:
    task: KernelTask
    nodes: dict[str, TrajectoryNode]
    root_id: str

    @property
    def root(self) -> TrajectoryNode:
        return self.nodes[self.root_id]

    def children_of(self, node_id: str) -> list[TrajectoryNode]:
        kids = [n for n in self.nodes.values() if n.parent_id == node_id]
        kids.sort(key=lambda n: n.node_id)
        return kids

    def depth(self) -> int:
        best = 0
        for node in self.nodes.values():
            d = 0
            cursor = node
            while cursor.parent_id is not None:
                cursor = self.nodes[cursor.parent_id]
                d += 1
            best = max(best, d)
        return best


def validate_tree(tree: TrajectoryTree) -> None:
    """Enforce the structural invariants; raise TreeError naming the node."""
    if tree.root_id not in tree.nodes:
        raise TreeError("root_id not present among nodes", tree.root_id)
    root = tree.root
    if root.parent_id is not None or root.incoming_action is not None:
        raise TreeError("root must have no parent and no incoming action",
                        root.node_id)
    if not (root.report.compile_ok and root.report.correct):
        raise TreeError("root report must be compile_ok and correct "
                        "(reference code runs)", root.node_id)
    for node in tree.nodes.values():
        if node.node_id == tree.root_id:
            continue
        if node.parent_id is None or node.incoming_action is None:
            raise TreeError("non-root node needs a parent and an incoming action",
                            node.node_id)
        if node.parent_id not in tree.nodes:
            raise TreeError(f"orphan node: parent {node.parent_id!r} missing",
                            node.node_id)
    # Reachability from the root doubles as the acyclicity check: a parent
    # cycle can never be reached from the root.
    reached: set[str] = set()
    frontier = [tree.root_id]
    while frontier:
        current = frontier.pop()
        if current in reached:
            continue
        reached.add(current)
        frontier.extend(n.node_id for n in tree.children_of(current))
    unreachable = sorted(set(tree.nodes) - reached)
    if unreachable:
        raise TreeError("node unreachable from root (orphan or cycle)",
                        unreachable[0])
    for node in tree.nodes.values():
        seen: set[str] = set()
        for child in tree.children_of(node.node_id):
            assert child.incoming_action is not None
            text = render_action(child.incoming_action)
            if text in seen:
                raise TreeError(
                    f"children share the incoming action {text!r}", node.node_id)
            seen.add(text)


def _placeholder_task(task_id: str, root_source: str) -> KernelTask:
    return KernelTask(task_id=task_id, description="(task record not stored)",
                      reference_source=root_source,
                      input_spec=(TensorSpec((1,), "float32", 0),),
                      suite=Suite.CUSTOM)


def load_tree(path: str | Path) -> TrajectoryTree:
    """Load and validate one trajectory tree file."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise TreeError(f"empty tree file {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TreeError(f"invalid header record: {exc}") from exc
    for key in ("task_id", "root_id"):
        if key not in header:
            raise TreeError(f"header missing {key!r}")
    root_id = str(header["root_id"])
    nodes: dict[str, TrajectoryNode] = {}
    for line in lines[1:]:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TreeError(f"invalid node record: {exc}") from exc
        node_id = str(rec.get("node_id", "<missing node_id>"))
        if node_id in nodes:
            raise TreeError("duplicate node_id", node_id)
        parent_id = rec.get("parent_id")
        action_text = rec.get("action_text")
        is_root = node_id == root_id
        try:
            action = None if is_root else parse_action_text(str(action_text))
        except Exception as exc:
            raise TreeError(f"bad action_text {action_text!r}: {exc}", node_id) from exc
        language = SourceLanguage.REFERENCE if is_root else SourceLanguage.KERNEL_DSL
        try:
            report = ExecutionReport(
                compile_ok=bool(rec["compile_ok"]), correct=bool(rec["correct"]),
                runtime_ms=float(rec["runtime_ms"]),
                baseline_ms=float(rec["baseline_ms"]),
                error_text=rec.get("error_text"))
            source = KernelSource(language, str(rec["source_text"]))
        except KeyError as exc:
            raise TreeError(f"node record missing {exc.args[0]!r}", node_id) from exc
        nodes[node_id] = TrajectoryNode(
            node_id=node_id,
            parent_id=None if is_root else str(parent_id),
            incoming_action=action, source=source, report=report)
    task_record = header.get("task")
    if task_record is not None:
        task = KernelTask.from_dict(task_record)
    else:
        if root_id not in nodes:
            raise TreeError("root node missing from file", root_id)
        task = _placeholder_task(str(header["task_id"]), nodes[root_id].source.text)
    tree = TrajectoryTree(task=task, nodes=nodes, root_id=root_id)
    validate_tree(tree)
    return tree


def save_tree(tree: TrajectoryTree, path: str | Path) -> None:
    """Write a tree file; node order is root first, then sorted by node_id."""
    header = {"task_id": tree.task.task_id, "root_id": tree.root_id,
              "task": tree.task.to_dict()}
    records = [json.dumps(header, sort_keys=True)]
    ordered = [tree.root] + sorted(
        (n for n in tree.nodes.values() if n.node_id != tree.root_id),
        key=lambda n: (len(n.node_id), n.node_id))
    for node in ordered:
        rec = {
            "node_id": node.node_id,
            "parent_id": node.parent_id,
            "action_text": (None if node.incoming_action is None
                            else render_action(node.incoming_action)),
            "source_text": node.source.text,
            "compile_ok": node.report.compile_ok,
            "correct": node.report.correct,
            "runtime_ms": node.report.runtime_ms,
            "baseline_ms": node.report.baseline_ms,
        }
        if node.report.error_text is not None:
            rec["error_text"] = node.report.error_text
        records.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(records) + "\n", encoding="utf-8")


def load_env_dataset(directory: str | Path) -> list[TrajectoryTree]:
    """Load every ``*.tree`` file under a dataset directory, sorted by name."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.tree"))
    if not paths:
        raise TreeError(f"no .tree files under {directory}")
    return [load_tree(p) for p in paths]


@dataclass(frozen=True)
class RewardConfig:
    """Shaped reward constants, graded easy -> hard.

    The ordering r_compile_fail < r_incorrect < r_correct_no_gain < r_gain_base
    makes compilation the cheapest milestone and measured improvement the most
    valuable; ``decay`` discounts later steps to damp degenerate looping.
    """

    r_compile_fail: float = -0.6
    r_incorrect: float = -0.3
    r_correct_no_gain: float = 0.1
    r_gain_base: float = 0.5
    r_gain_scale: float = 0.5
    decay: float = 0.9
    stop_bonus_scale: float = 1.0

    def __post_init__(self):
        if not (self.r_compile_fail < self.r_incorrect
                < self.r_correct_no_gain < self.r_gain_base):
            raise ValueError("reward tiers must be strictly increasing: "
                             "compile_fail < incorrect < no_gain < gain_base")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must lie in (0, 1]")

    def to_dict(self) -> dict[str, float]:
        return {
            "r_compile_fail": self.r_compile_fail,
            "r_incorrect": self.r_incorrect,
            "r_correct_no_gain": self.r_correct_no_gain,
            "r_gain_base": self.r_gain_base,
            "r_gain_scale": self.r_gain_scale,
            "decay": self.decay,
            "stop_bonus_scale": self.stop_bonus_scale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RewardConfig":
        return cls(**{k: float(v) for k, v in d.items()})


def compute_reward(prev: ExecutionReport, new: ExecutionReport,
                   step_index: int, cfg: RewardConfig) -> float:
    """Shaped reward for replacing a valid kernel with a new candidate.

    Tiers: compile failure, incorrect output, correct without gain, correct
    with gain (log2-capped proportional bonus). The whole tier value decays
    geometrically with the step index.
    """
    if not prev.correct:
        raise ValueError("compute_reward requires a correct previous report")
    if not new.compile_ok:
        base = cfg.r_compile_fail
    elif not new.correct:
        base = cfg.r_incorrect
    elif new.runtime_ms >= prev.runtime_ms:
        base = cfg.r_correct_no_gain
    else:
        gain = math.log2(prev.runtime_ms / new.runtime_ms)
        base = cfg.r_gain_base + cfg.r_gain_scale * min(1.0, gain)
    return base * cfg.decay ** step_index


def stop_reward(root: ExecutionReport, current: ExecutionReport,
                step_index: int, cfg: RewardConfig) -> float:
    """Terminal bonus: proportional to the overall speedup achieved so far."""
    overall = root.runtime_ms / current.runtime_ms
    return cfg.stop_bonus_scale * (overall - 1.0) * cfg.decay ** step_index


class OfflineEnv:
    """Episode driver over one trajectory tree.

    The tree is immutable and shareable; per-episode state lives on the env
    instance, so use one instance per concurrent episode.
    """

    def __init__(self, tree: TrajectoryTree, hardware: HardwareSpec,
                 reward_config: RewardConfig | None = None, max_steps: int = 8):
        if max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        self.tree = tree
        self.hardware = hardware
        self.reward_config = reward_config or RewardConfig()
        self.max_steps = max_steps
        self._edges: dict[str, dict[str, TrajectoryNode]] = {}
        for node_id in tree.nodes:
            self._edges[node_id] = {
                render_action(child.incoming_action): child
                for child in tree.children_of(node_id)
                if child.incoming_action is not None
            }
        self._current = tree.root
        self._history: list[HistoryEntry] = []
        self._done = True  # requires reset() before step()

    def reset(self) -> Observation:
        self._current = self.tree.root
        self._history = []
        self._done = False
        return self._observe()

    def _observe(self) -> Observation:
        return Observation(
            task=self.tree.task,
            current_source=self._current.source,
            step_index=len(self._history),
            history=tuple(self._history),
            hardware=self.hardware,
        )

    def step(self, action: OptimizationAction) -> tuple[Observation, float, bool]:
        """Apply one action: move along a stored edge, stop, or stay in place.

        Off-tree actions (no stored edge) keep the current node and cost the
        incorrect-tier penalty; edges onto broken candidates score their
        stored outcome but also stay, so the environment only ever stands on
        valid kernels.
        """
        if self._done:
            raise EnvError("episode is finished; call reset() first")
        cfg = self.reward_config
        step_index = len(self._history)
        done = False
        if action.kind is ActionKind.STOP:
            reward = stop_reward(self.tree.root.report, self._current.report,
                                 step_index, cfg)
            summary = f"stop overall_speedup={self._overall_speedup():.4f}"
            done = True
        else:
            child = self._edges[self._current.node_id].get(render_action(action))
            if child is None:
                reward = cfg.r_incorrect * cfg.decay ** step_index
                summary = "off-tree"
            else:
                reward = compute_reward(self._current.report, child.report,
                                        step_index, cfg)
                summary = self._transition_summary(child.report)
                if child.report.correct:
                    self._current = child
        self._history.append(HistoryEntry(action=action, reward=reward,
                                          summary=summary))
        if len(self._history) >= self.max_steps:
            done = True
        self._done = done
        return self._observe(), reward, done

    def _overall_speedup(self) -> float:
        return self.tree.root.report.runtime_ms / self._current.report.runtime_ms

    def _transition_summary(self, report: ExecutionReport) -> str:
        if not report.compile_ok:
            return "compile failed"
        if not report.correct:
            return "incorrect output"
        if report.runtime_ms >= self._current.report.runtime_ms:
            return f"no gain runtime={report.runtime_ms:.4f}"
        ratio = self._current.report.runtime_ms / report.runtime_ms
        return f"improved {ratio:.4f}x runtime={report.runtime_ms:.4f}"


_CHAIN_LINE_RE = re.compile(
    r"^(?P<out>\w+) = (?P<op>\w+)\((?P<arg>\w+)\)$")


def _fuse_chain_lines(text: str, start: int, end: int) -> str:
    """Textual fusion of two adjacent chain lines (1-based inclusive span)."""
    lines = text.splitlines()
    first = _CHAIN_LINE_RE.match(lines[start - 1])
    second = _CHAIN_LINE_RE.match(lines[end - 1])
    if first is None or second is None:
        raise ValueError("span does not cover two simple chain lines")
    fused = (f"{second.group('out')} = "
             f"{first.group('op')}_{second.group('op')}({first.group('arg')})")
    return "\n".join(lines[:start - 1] + [fused] + lines[end:])


def generate_synthetic_tree(seed: int, depth: int, branching: int) -> TrajectoryTree:
    """Deterministic stand-in for a real trajectory dataset.

    The tree holds exactly one root-to-leaf "golden path" of strictly
    decreasing runtimes; every other child is a seeded mix of compile
    failures, incorrect results, and non-improving correct results. Node
    sources are fusable operator chains so the enumerated action catalog
    always contains every stored edge.
    """
    if depth < 1 or branching < 1:
        raise ValueError("depth and branching must be >= 1")
    rng = random.Random(seed)
    chain_len = depth + branching
    ops = [f"stage{i}" for i in range(1, chain_len)]
    lines = ["t0 = load(in0)"]
    for i, op in enumerate(ops[:-1], start=1):
        lines.append(f"t{i} = {op}(t{i - 1})")
    lines.append(f"out = {ops[-1]}(t{chain_len - 2})")
    root_text = "\n".join(lines)

    root_runtime = round(rng.uniform(5.0, 20.0), 3)
    task = KernelTask(
        task_id=f"synth-{seed}-{depth}-{branching}",
        description="synthetic fusable operator chain",
        reference_source=root_text,
        input_spec=(TensorSpec((8, 8), "float32", seed),),
        suite=Suite.CUSTOM,
    )
    root = TrajectoryNode(
        node_id="n0", parent_id=None, incoming_action=None,
        source=KernelSource(SourceLanguage.REFERENCE, root_text),
        report=ExecutionReport(True, True, root_runtime, root_runtime))
    nodes: dict[str, TrajectoryNode] = {"n0": root}

    next_id = 1
    current = root
    for level in range(depth):
        text = current.source.text
        n_lines = len(text.splitlines())
        fusable = [(i, i + 1) for i in range(1, n_lines)]
        spans = rng.sample(fusable, branching)
        golden_pos = rng.randrange(branching)
        golden_child: TrajectoryNode | None = None
        for pos, (start, end) in enumerate(spans):
            child_text = _fuse_chain_lines(text, start, end)
            action = parse_action_text(f"fuse lines {start}-{end}")
            if pos == golden_pos:
                runtime = round(current.report.runtime_ms / rng.uniform(1.4, 1.9), 4)
                report = ExecutionReport(True, True, runtime, root_runtime)
            else:
                outcome = rng.choice(["compile_fail", "incorrect", "no_gain"])
                if outcome == "compile_fail":
                    report = ExecutionReport(False, False, 0.0, root_runtime,
                                             error_text="syntax error")
                elif outcome == "incorrect":
                    report = ExecutionReport(True, False, 0.0, root_runtime,
                                             error_text="output mismatch")
                else:
                    runtime = round(current.report.runtime_ms * rng.uniform(1.05, 1.4), 4)
                    report = ExecutionReport(True, True, runtime, root_runtime)
            child = TrajectoryNode(
                node_id=f"n{next_id}", parent_id=current.node_id,
                incoming_action=action,
                source=KernelSource(SourceLanguage.KERNEL_DSL, child_text),
                report=report)
            nodes[child.node_id] = child
            next_id += 1
            if pos == golden_pos:
                golden_child = child
        assert golden_child is not None
        current = golden_child

    tree = TrajectoryTree(task=task, nodes=nodes, root_id="n0")
    validate_tree(tree)
    return tree


def replay_log(tree: TrajectoryTree, hardware: HardwareSpec,
               action_texts: Sequence[str],
               reward_config: RewardConfig | None = None,
               max_steps: int = 8) -> str:
    """Replay a fixed action script and render the episode as JSONL text.

    The rendering is byte-stable for a given tree and script, which makes it
    usable as a determinism witness in tests and audits.
    """
    env = OfflineEnv(tree, hardware, reward_config, max_steps)
    obs = env.reset()
    records: list[dict[str, Any]] = [{
        "event": "reset",
        "source_hash": content_hash(obs.current_source.text),
        "step_index": obs.step_index,
    }]
    for text in action_texts:
        obs, reward, done = env.step(parse_action_text(text))
        records.append({
            "event": "step",
            "action": text,
            "reward": reward,
            "source_hash": content_hash(obs.current_source.text),
            "step_index": obs.step_index,
            "summary": obs.history[-1].summary,
            "done": done,
        })
        if done:
            break
    return "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n"


def golden_path(tree: TrajectoryTree) -> list[TrajectoryNode]:
    """The unique strictly improving root-to-leaf chain of a synthetic tree."""
    path = [tree.root]
    while True:
        improving = [c for c in tree.children_of(path[-1].node_id)
                     if c.report.correct
                     and c.report.runtime_ms < path[-1].report.runtime_ms]
        if not improving:
            return path
        if len(improving) > 1:
            raise TreeError("multiple improving children; golden path ambiguous",
                            path[-1].node_id)
        path.append(improving[0])
