"""Command-line entry point: train, optimize, eval, gen-env.

Exit codes: 0 success, 2 usage/config errors, 3 runtime failures. Every
subcommand honors the global --seed; all randomness flows from it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable

from .clients import (
    EchoCoder,
    HttpChatCoder,
    HttpTokenScorer,
    MockTableRunner,
    ScriptedCoder,
    SubprocessRunner,
)
from .config import ConfigError, RunConfig
from .env import OfflineEnv, generate_synthetic_tree, load_env_dataset, save_tree
from .metrics import render_table, run_benchmark
from .model import HardwareSpec, KernelTask, parse_hardware_spec, parse_task_suite
from .orchestrate import (
    ExampleBank,
    OptimizeSettings,
    OrchestratorError,
    make_episode_file_logger,
    optimize,
)
from .policy import (
    FeaturizedPolicy,
    RemoteTokenPolicy,
    UniformPolicy,
    policy_checkpoint_config_hash,
)
from .training import Trainer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernopt",
        description="Hierarchical kernel optimization pipeline")
    parser.add_argument("--config", type=Path, help="run configuration file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--mock", action="store_true",
                        help="force the in-process mock runner")
    parser.add_argument("--out-dir", type=Path, default=None,
                        help="override paths.out_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the planning policy on an "
                                           "offline trajectory dataset")
    p_train.set_defaults(func=cmd_train)

    p_opt = sub.add_parser("optimize", help="optimize one task end to end")
    p_opt.add_argument("task_id")
    p_opt.set_defaults(func=cmd_optimize)

    p_eval = sub.add_parser("eval", help="run the benchmark suite and report "
                                         "metrics")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("gen-env", help="generate synthetic trajectory trees")
    p_gen.add_argument("--depth", type=int, default=3)
    p_gen.add_argument("--branching", type=int, default=3)
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--out", type=Path, required=True,
                       help="output directory for .tree files")
    p_gen.set_defaults(func=cmd_gen_env)
    return parser


def _load_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    config = RunConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.mock:
        config.runner["mode"] = "mock"
    if args.out_dir is not None:
        config.paths["out_dir"] = str(args.out_dir.resolve())
    return config


def _make_policy(config: RunConfig):
    backend = config.policy.get("backend", "uniform")
    if backend == "uniform":
        return UniformPolicy()
    if backend == "featurized":
        checkpoint = config.policy.get("checkpoint")
        if checkpoint:
            path = Path(checkpoint)
            if not path.is_absolute():
                path = config.base_dir / path
            if not path.is_file():
                raise ConfigError(f"policy checkpoint not found: {path}")
            return FeaturizedPolicy.load(path)
        return FeaturizedPolicy()
    if backend == "remote":
        base_url = config.policy.get("base_url")
        model = config.policy.get("model")
        if not base_url or not model:
            raise ConfigError("remote policy needs policy.base_url and policy.model")
        scorer = HttpTokenScorer(base_url, model,
                                 config.policy.get("api_key_env", "CODER_API_KEY"))
        return RemoteTokenPolicy(scorer)
    raise ConfigError(f"unknown policy backend {backend!r}")


def _make_coder_factory(config: RunConfig) -> Callable[[KernelTask], object]:
    mode = config.coder.get("mode", "identity")
    if mode == "identity":
        coder = EchoCoder()
        return lambda task: coder
    if mode == "scripted":
        script_value = config.coder.get("script")
        if not script_value:
            raise ConfigError("scripted coder needs coder.script")
        script_path = Path(script_value)
        if not script_path.is_absolute():
            script_path = config.base_dir / script_path
        if not script_path.is_file():
            raise ConfigError(f"coder script not found: {script_path}")
        script = json.loads(script_path.read_text(encoding="utf-8"))

        def factory(task: KernelTask):
            responses = script.get(task.task_id)
            if not responses:
                raise ConfigError(f"coder script has no responses for task "
                                  f"{task.task_id!r}")
            return ScriptedCoder(responses)

        return factory
    if mode == "http":
        base_url = config.coder.get("base_url")
        model = config.coder.get("model")
        if not base_url or not model:
            raise ConfigError("http coder needs coder.base_url and coder.model")
        coder = HttpChatCoder(base_url, model,
                              config.coder.get("api_key_env", "CODER_API_KEY"))
        return lambda task: coder
    raise ConfigError(f"unknown coder mode {mode!r}")


def _make_runner(config: RunConfig):
    mode = config.runner.get("mode", "mock")
    if mode == "mock":
        table_value = config.runner.get("cost_table")
        if not table_value:
            raise ConfigError("mock runner needs runner.cost_table")
        table_path = Path(table_value)
        if not table_path.is_absolute():
            table_path = config.base_dir / table_path
        if not table_path.is_file():
            raise ConfigError(f"cost table not found: {table_path}")
        return MockTableRunner.from_file(table_path)
    if mode == "subprocess":
        command = config.runner.get("command")
        if not command:
            raise ConfigError("subprocess runner needs runner.command")
        return SubprocessRunner(list(command))
    raise ConfigError(f"unknown runner mode {mode!r}")


def _load_inputs(config: RunConfig) -> tuple[list[KernelTask], HardwareSpec]:
    suite_path = config.resolve_existing("suite")
    hardware_path = config.resolve_existing("hardware")
    tasks = parse_task_suite(suite_path)
    if not tasks:
        raise ConfigError(f"suite file {suite_path} holds no tasks")
    return tasks, parse_hardware_spec(hardware_path)


def _settings_for(config: RunConfig, hardware: HardwareSpec,
                  seed: int) -> OptimizeSettings:
    return OptimizeSettings(
        hardware=hardware,
        max_steps=config.max_steps,
        selection=config.policy.get("selection", "argmax"),
        temperature=float(config.policy.get("temperature", 1.0)),
        fallback_uniform=bool(config.policy.get("fallback_uniform", False)),
        seed=seed,
        timing=config.timing,
        tolerance=config.tolerance,
        reward_config=config.reward,
    )


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset_dir = config.resolve_existing("env_dataset")
    hardware = parse_hardware_spec(config.resolve_existing("hardware"))
    trees = load_env_dataset(dataset_dir)
    envs = [OfflineEnv(tree, hardware, config.reward, config.max_steps)
            for tree in trees]
    backend = FeaturizedPolicy()
    trainer = Trainer(envs, backend, config.trainer, seed=config.seed)
    trainer.run()
    out = config.out_dir()
    config_hash = policy_checkpoint_config_hash(config.trainer.to_dict())
    backend.save(out / "checkpoint.json", config_hash=config_hash)
    trainer.save_log(out / "train_log.jsonl")
    final_return = trainer.log[-1]["mean_return"] if trainer.log else 0.0
    print(f"trained on {len(envs)} tree(s); final mean return {final_return:.4f}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return 0


def cmd_optimize(args) -> int:
    config = _load_config(args)
    tasks, hardware = _load_inputs(config)
    by_id = {t.task_id: t for t in tasks}
    if args.task_id not in by_id:
        raise ConfigError(f"unknown task_id {args.task_id!r} "
                          f"(suite holds {sorted(by_id)})")
    task = by_id[args.task_id]
    bank = ExampleBank(config.resolve_existing("example_bank"))
    policy = _make_policy(config)
    coder = _make_coder_factory(config)(task)
    runner = _make_runner(config)
    out = config.out_dir()
    logger = make_episode_file_logger(out / f"episode_{task.task_id}.jsonl")
    settings = _settings_for(config, hardware, seed=config.seed)
    result = optimize(task, policy, coder, runner, settings, bank,
                      episode_log=logger)
    result.save(out / f"result_{task.task_id}.json")
    print(f"task {task.task_id}: best speedup {result.best_speedup:.4f}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    tasks, hardware = _load_inputs(config)
    bank = ExampleBank(config.resolve_existing("example_bank"))
    policy = _make_policy(config)
    coder_factory = _make_coder_factory(config)
    runner = _make_runner(config)
    out = config.out_dir()

    def pipeline(task: KernelTask):
        settings = _settings_for(config, hardware, seed=config.seed)
        logger = make_episode_file_logger(out / f"episode_{task.task_id}.jsonl")
        return optimize(task, policy, coder_factory(task), runner, settings,
                        bank, episode_log=logger)

    report = run_benchmark(
        tasks, pipeline,
        suite=config.suite_label,
        p_values=config.fast_p,
        tolerance=config.tolerance,
        parallelism=config.parallelism)
    report.save(out / "report.json")
    table = render_table(report)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_gen_env(args) -> int:
    seed = args.seed if args.seed is not None else 0
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        tree = generate_synthetic_tree(seed + i, args.depth, args.branching)
        save_tree(tree, out_dir / f"synth_{seed + i}.tree")
    print(f"wrote {args.count} tree(s) to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OrchestratorError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
