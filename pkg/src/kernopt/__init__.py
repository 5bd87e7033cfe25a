"""Hierarchical GPU-kernel optimization pipeline.

A planning policy proposes semantic optimization actions (tile / fuse /
pipeline / reorder over code regions), an editing layer turns each action
into a stepwise code edit through a pluggable code-generation client, and
an evaluation harness verifies correctness and measures speedups. Policy
training runs against an offline tree-structured trajectory environment, so
the whole pipeline is exercisable without a GPU or a model endpoint.
"""

from importlib import resources
from pathlib import Path

from .model import (
    ActionKind,
    CodeRegion,
    ExecutionReport,
    HardwareSpec,
    HistoryEntry,
    KernelSource,
    KernelTask,
    Observation,
    OptimizationAction,
    SchemaError,
    SourceLanguage,
    Suite,
    TensorSpec,
    content_hash,
    parse_hardware_spec,
    parse_task_suite,
)
from .actions import (
    ActionCatalog,
    ActionParseError,
    OutOfCatalogError,
    enumerate_actions,
    parse_action,
    render_action,
)
from .analysis import AnalysisError, Statement, StatementKind, extract_regions, \
    extract_statements, validate_region
from .env import (
    OfflineEnv,
    RewardConfig,
    TrajectoryNode,
    TrajectoryTree,
    compute_reward,
    generate_synthetic_tree,
    load_tree,
    save_tree,
)
from .metrics import MetricsReport, TaskResult, accuracies, fast_p, mean_speedup, \
    run_benchmark
from .orchestrate import (
    ExampleBank,
    OptimizationResult,
    OptimizeSettings,
    PromptBundle,
    build_prompt,
    extract_code,
    optimize,
)
from .policy import (
    FeaturizedPolicy,
    PolicyDistribution,
    RemoteTokenPolicy,
    TokenScore,
    UniformPolicy,
    make_token_score,
    sample_action,
    score_actions,
    softmax,
)
from .training import Trainer, TrainerConfig, collect_rollouts, ppo_update

__version__ = "0.1.0"


def data_path(*parts: str) -> Path:
    """Path to a bundled data file (fixtures, hardware descriptors, configs)."""
    return Path(resources.files("kernopt") / "data").joinpath(*parts)
