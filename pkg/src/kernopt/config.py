"""Run configuration: one JSON file with per-subcommand sections.

Relative paths resolve against the config file's directory so a config can
travel with its fixtures. Seeds are explicit; nothing in the pipeline seeds
from the wall clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .env import RewardConfig
from .training import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int
    max_steps: int = 8
    parallelism: int = 1
    base_dir: Path = field(default_factory=Path)
    paths: dict[str, str | None] = field(default_factory=dict)
    policy: dict[str, Any] = field(default_factory=dict)
    coder: dict[str, Any] = field(default_factory=dict)
    runner: dict[str, Any] = field(default_factory=dict)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    tolerance: tuple[float, float] = (1e-2, 1e-2)
    timing: tuple[int, int] = (3, 10)
    fast_p: tuple[float, ...] = (1.0, 2.0)
    suite_label: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if "seed" not in data:
            raise ConfigError(f"config {path} must set an explicit 'seed'")
        tolerance = data.get("tolerance", {})
        timing = data.get("timing", {})
        try:
            reward = RewardConfig.from_dict(data["reward"]) if "reward" in data \
                else RewardConfig()
            trainer = TrainerConfig.from_dict(data["trainer"]) if "trainer" in data \
                else TrainerConfig()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config {path}: {exc}") from exc
        return cls(
            seed=int(data["seed"]),
            max_steps=int(data.get("max_steps", 8)),
            parallelism=int(data.get("parallelism", 1)),
            base_dir=path.parent,
            paths=dict(data.get("paths", {})),
            policy=dict(data.get("policy", {})),
            coder=dict(data.get("coder", {})),
            runner=dict(data.get("runner", {})),
            reward=reward,
            trainer=trainer,
            tolerance=(float(tolerance.get("atol", 1e-2)),
                       float(tolerance.get("rtol", 1e-2))),
            timing=(int(timing.get("warmup", 3)), int(timing.get("iters", 10))),
            fast_p=tuple(float(p) for p in data.get("fast_p", (1.0, 2.0))),
            suite_label=data.get("suite_label"),
        )

    def resolve(self, key: str, required: bool = False) -> Path | None:
        """Path for a ``paths`` entry, resolved against the config directory."""
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config paths.{key} is required for this command")
            return None
        path = Path(value)
        if not path.is_absolute():
            path = self.base_dir / path
        return path

    def resolve_existing(self, key: str) -> Path:
        path = self.resolve(key, required=True)
        assert path is not None
        if not path.exists():
            raise ConfigError(f"config paths.{key} does not exist: {path}")
        return path

    def out_dir(self) -> Path:
        path = self.resolve("out_dir") or Path("kernopt_out")
        path.mkdir(parents=True, exist_ok=True)
        return path
