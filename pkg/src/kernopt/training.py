"""On-policy rollout collection and PPO updates for the featurized policy.

The update applies the standard clipped surrogate objective with a value
loss and an entropy bonus; gradients are computed analytically for the
bilinear policy so the whole trainer runs on numpy without autograd.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .actions import enumerate_actions, render_action
from .env import OfflineEnv
from .policy import (
    FeaturizedPolicy,
    action_feature_matrix,
    argmax_action,
    observation_features,
    sample_index,
    score_actions,
    softmax,
)


class TrainerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    """PPO constants; the defaults are the standard configuration."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 0.05
    iterations: int = 120
    episodes_per_iteration: int = 32
    adv_norm_eps: float = 1e-8

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma, "gae_lambda": self.gae_lambda,
            "clip_eps": self.clip_eps, "epochs": self.epochs,
            "entropy_coef": self.entropy_coef, "value_coef": self.value_coef,
            "learning_rate": self.learning_rate, "iterations": self.iterations,
            "episodes_per_iteration": self.episodes_per_iteration,
            "adv_norm_eps": self.adv_norm_eps,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainerConfig":
        kwargs: dict[str, Any] = dict(d)
        for key in ("epochs", "iterations", "episodes_per_iteration"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Transition:
    obs_features: np.ndarray       # (OBS_DIM,)
    action_features: np.ndarray    # (n_actions, ACT_DIM)
    action_index: int
    logprob: float                 # at sampling time
    reward: float
    done: bool
    value: float                   # critic estimate at sampling time


@dataclass
class RolloutBatch:
    transitions: list[Transition] = field(default_factory=list)
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    episode_returns: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Reward-to-go within one episode: R_t = r_t + gamma * R_{t+1}."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae_advantages(rewards: Sequence[float], values: Sequence[float],
                   gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates for one terminated episode."""
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv


def collect_rollouts(envs: Sequence[OfflineEnv], backend, episodes: int,
                     seed: int, cfg: TrainerConfig) -> RolloutBatch:
    """Run full episodes round-robin over the environment set.

    Deterministic given (seed, backend parameters, environments); the batch
    carries GAE advantages and discounted returns ready for the update.
    """
    if not envs:
        raise TrainerError("at least one environment tree is required")
    rng = np.random.default_rng(seed)
    batch = RolloutBatch()
    all_adv: list[np.ndarray] = []
    all_ret: list[np.ndarray] = []
    for episode in range(episodes):
        env = envs[episode % len(envs)]
        obs = env.reset()
        rewards: list[float] = []
        values: list[float] = []
        done = False
        while not done:
            catalog = enumerate_actions(obs)
            dist = score_actions(obs, catalog, backend)
            value = backend.value(obs) if hasattr(backend, "value") else 0.0
            idx = sample_index(dist, rng)
            obs_next, reward, done = env.step(catalog.actions[idx])
            batch.transitions.append(Transition(
                obs_features=observation_features(obs),
                action_features=action_feature_matrix(obs, catalog),
                action_index=idx,
                logprob=float(np.log(dist.probabilities[idx])),
                reward=reward, done=done, value=value))
            rewards.append(reward)
            values.append(value)
            obs = obs_next
        all_adv.append(gae_advantages(rewards, values, cfg.gamma, cfg.gae_lambda))
        all_ret.append(discounted_returns(rewards, cfg.gamma))
        batch.episode_returns.append(float(sum(rewards)))
    batch.advantages = np.concatenate(all_adv) if all_adv else np.zeros(0)
    batch.returns = np.concatenate(all_ret) if all_ret else np.zeros(0)
    return batch


class AdamState:
    """Minimal Adam optimizer over a dict of parameter arrays."""

    def __init__(self, shapes: dict[str, tuple[int, ...]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad ** 2
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            params[key] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def policy_objective_and_grad(
        weights: np.ndarray, batch: RolloutBatch, advantages: np.ndarray,
        cfg: TrainerConfig) -> tuple[float, float, float, float, np.ndarray]:
    """Clipped-surrogate policy loss (minus entropy bonus) and its gradient.

    Returns (total_policy_objective, surrogate_loss, entropy, clip_fraction,
    grad_wrt_weights). The gradient follows the elementwise min: transitions
    whose clipped branch is strictly smaller contribute no surrogate
    gradient.
    """
    n = len(batch.transitions)
    grad = np.zeros_like(weights)
    surrogate_total = 0.0
    entropy_total = 0.0
    clipped_count = 0
    for tr, adv in zip(batch.transitions, advantages):
        logits = tr.action_features @ weights @ tr.obs_features
        probs = softmax(logits)
        logprob = float(np.log(probs[tr.action_index]))
        ratio = float(np.exp(logprob - tr.logprob))
        clipped_ratio = float(np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps))
        surr_unclipped = ratio * adv
        surr_clipped = clipped_ratio * adv
        surrogate_total += -min(surr_unclipped, surr_clipped)
        if abs(ratio - 1.0) > cfg.clip_eps:
            clipped_count += 1
        # d logprob / d W = (phi_a - sum_b p_b phi_b) outer obs
        dlogprob_act = tr.action_features[tr.action_index] - probs @ tr.action_features
        if surr_unclipped <= surr_clipped:
            grad += (-adv * ratio) * np.outer(dlogprob_act, tr.obs_features)
        entropy = float(-np.sum(probs * np.log(probs)))
        entropy_total += entropy
        if cfg.entropy_coef != 0.0:
            dh_dlogits = -probs * (np.log(probs) + entropy)
            dh_dact = dh_dlogits @ tr.action_features
            grad += -cfg.entropy_coef * np.outer(dh_dact, tr.obs_features)
    surrogate_loss = surrogate_total / n
    entropy_mean = entropy_total / n
    total = surrogate_loss - cfg.entropy_coef * entropy_mean
    return total, surrogate_loss, entropy_mean, clipped_count / n, grad / n


def value_loss_and_grad(value_weights: np.ndarray,
                        batch: RolloutBatch) -> tuple[float, np.ndarray]:
    obs = np.stack([tr.obs_features for tr in batch.transitions])
    predictions = obs @ value_weights
    errors = predictions - batch.returns
    loss = 0.5 * float(np.mean(errors ** 2))
    grad = (errors @ obs) / len(batch.transitions)
    return loss, grad


def ppo_update(batch: RolloutBatch, backend: FeaturizedPolicy,
               cfg: TrainerConfig, optimizer: AdamState | None = None) -> dict[str, float]:
    """One PPO update over a rollout batch (``cfg.epochs`` passes).

    Advantages are normalized per batch before the update. Raises
    TrainerError on a non-finite loss, leaving parameters untouched from the
    failing epoch onward.
    """
    if not getattr(backend, "trainable", False):
        raise TrainerError("ppo_update requires the trainable featurized backend")
    if len(batch) == 0:
        raise TrainerError("rollout batch is empty")
    advantages = batch.advantages.copy()
    std = float(np.std(advantages))
    advantages = (advantages - float(np.mean(advantages))) / (std + cfg.adv_norm_eps)

    if optimizer is None:
        optimizer = AdamState({"w": backend.weights.shape,
                               "u": backend.value_weights.shape})
    stats: dict[str, float] = {}
    for _ in range(cfg.epochs):
        total, surrogate, entropy, clip_fraction, grad_w = \
            policy_objective_and_grad(backend.weights, batch, advantages, cfg)
        vloss, grad_u = value_loss_and_grad(backend.value_weights, batch)
        if not (np.isfinite(total) and np.isfinite(vloss)):
            raise TrainerError(
                f"non-finite loss (policy={total}, value={vloss}); update aborted")
        params = {"w": backend.weights, "u": backend.value_weights}
        optimizer.step(params, {"w": grad_w, "u": cfg.value_coef * grad_u},
                       cfg.learning_rate)
        stats = {"policy_loss": float(surrogate), "value_loss": float(vloss),
                 "entropy": float(entropy), "clip_fraction": float(clip_fraction)}
    return stats


class Trainer:
    """Iterated collect/update loop with a deterministic seed schedule."""

    def __init__(self, envs: Sequence[OfflineEnv], backend: FeaturizedPolicy,
                 cfg: TrainerConfig, seed: int):
        self.envs = list(envs)
        self.backend = backend
        self.cfg = cfg
        self.seed = seed
        self.optimizer = AdamState({"w": backend.weights.shape,
                                    "u": backend.value_weights.shape})
        self.log: list[dict[str, float]] = []

    def run(self, iterations: int | None = None) -> list[dict[str, float]]:
        iterations = self.cfg.iterations if iterations is None else iterations
        for iteration in range(iterations):
            batch = collect_rollouts(
                self.envs, self.backend, self.cfg.episodes_per_iteration,
                seed=self.seed * 100003 + iteration, cfg=self.cfg)
            stats = ppo_update(batch, self.backend, self.cfg, self.optimizer)
            record = {
                "iteration": iteration,
                "mean_return": float(np.mean(batch.episode_returns)),
                **stats,
            }
            self.log.append(record)
        return self.log

    def save_log(self, path: str | Path) -> None:
        text = "\n".join(json.dumps(rec, sort_keys=True) for rec in self.log)
        Path(path).write_text(text + "\n", encoding="utf-8")


def evaluate_policy(env: OfflineEnv, backend, greedy: bool = True,
                    seed: int = 0) -> tuple[float, list[str]]:
    """Roll one episode and return (undiscounted return, action texts)."""
    rng = np.random.default_rng(seed)
    obs = env.reset()
    total = 0.0
    taken: list[str] = []
    done = False
    while not done:
        catalog = enumerate_actions(obs)
        dist = score_actions(obs, catalog, backend)
        action = (argmax_action(dist) if greedy
                  else catalog.actions[sample_index(dist, rng)])
        taken.append(render_action(action))
        obs, reward, done = env.step(action)
        total += reward
    return total, taken


def root_action_probability(env: OfflineEnv, backend, action_text: str) -> float:
    """Probability the policy assigns to a given action at the reset state."""
    obs = env.reset()
    catalog = enumerate_actions(obs)
    dist = score_actions(obs, catalog, backend)
    for i, action in enumerate(catalog.actions):
        if render_action(action) == action_text:
            return float(dist.probabilities[i])
    return 0.0
