"""Action-scoring policies over the semantic action catalog.

An action is a token sequence; its score is the joint probability of its
tokens (product of per-token conditionals), and the sampling distribution is
the softmax over the per-action logits. Two backends are provided:

- FeaturizedPolicy: a trainable bilinear scorer over hand-built observation
  and action features. This is the backend the PPO trainer updates.
- RemoteTokenPolicy: scores each catalog action through a token-scoring
  client (per-token log-probabilities of the rendered action text given an
  observation prompt), with a generate-and-parse fallback when the serving
  interface cannot return token scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .actions import ActionCatalog, OutOfCatalogError, parse_action, render_action
from .model import ActionKind, Observation, OptimizationAction, content_hash


class PolicyBackendError(RuntimeError):
    """Backend could not score the catalog; carries backend diagnostics."""


@dataclass(frozen=True)
class TokenScore:
    """Per-token log-probabilities of one action string and their sum."""

    tokens: tuple[str, ...]
    per_token_logprob: tuple[float, ...]
    joint_logprob: float

    def __post_init__(self):
        if len(self.tokens) != len(self.per_token_logprob):
            raise ValueError("one log-probability per token required")
        if abs(self.joint_logprob - sum(self.per_token_logprob)) > 1e-9:
            raise ValueError("joint_logprob must equal the sum of "
                             "per-token log-probabilities")


def make_token_score(tokens: Sequence[str],
                     per_token_logprob: Sequence[float]) -> TokenScore:
    """Build a TokenScore with the joint computed as the sum of the parts."""
    return TokenScore(tokens=tuple(tokens),
                      per_token_logprob=tuple(float(x) for x in per_token_logprob),
                      joint_logprob=float(sum(per_token_logprob)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over a 1-D logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


@dataclass(frozen=True)
class PolicyDistribution:
    """Catalog-aligned logits and their softmax probabilities."""

    catalog: ActionCatalog
    logits: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if len(self.logits) != len(self.catalog) or len(self.probabilities) != len(self.catalog):
            raise ValueError("logits/probabilities must align with the catalog")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")
        if np.any(self.probabilities < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(np.sum(self.probabilities)) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        if np.max(np.abs(self.probabilities - softmax(self.logits))) > 1e-9:
            raise ValueError("probabilities must equal softmax(logits)")


def make_distribution(catalog: ActionCatalog, logits: np.ndarray) -> PolicyDistribution:
    logits = np.asarray(logits, dtype=np.float64)
    return PolicyDistribution(catalog=catalog, logits=logits,
                              probabilities=softmax(logits))


class PolicyBackend(Protocol):
    def action_logits(self, obs: Observation, catalog: ActionCatalog) -> np.ndarray:
        ...


def score_actions(obs: Observation, catalog: ActionCatalog,
                  backend: PolicyBackend) -> PolicyDistribution:
    """Score every catalog action and normalize with a softmax."""
    if len(catalog) == 0:
        raise ValueError("catalog must be nonempty")
    try:
        logits = backend.action_logits(obs, catalog)
    except PolicyBackendError:
        raise
    except Exception as exc:
        raise PolicyBackendError(
            f"{type(backend).__name__} failed to score actions: {exc}") from exc
    return make_distribution(catalog, logits)


def uniform_distribution(catalog: ActionCatalog) -> PolicyDistribution:
    return make_distribution(catalog, np.zeros(len(catalog)))


def sample_index(dist: PolicyDistribution, rng: np.random.Generator) -> int:
    """Draw a catalog index according to the distribution, deterministically
    for a given generator state."""
    cumulative = np.cumsum(dist.probabilities)
    cumulative[-1] = 1.0
    return int(np.searchsorted(cumulative, rng.random(), side="right"))


def sample_action(dist: PolicyDistribution,
                  rng: np.random.Generator) -> OptimizationAction:
    return dist.catalog.actions[sample_index(dist, rng)]


def argmax_action(dist: PolicyDistribution) -> OptimizationAction:
    return dist.catalog.actions[int(np.argmax(dist.probabilities))]


# --------------------------------------------------------------------------
# Featurized trainable backend
# --------------------------------------------------------------------------

N_STEP_BUCKETS = 4
N_POS_BUCKETS = 8
OBS_DIM = 1 + N_STEP_BUCKETS + 1 + 2      # bias, step bucket, last-reward sign, hw
# kind one-hot, span geometry, bucketed start position, prior count
ACT_DIM = len(ActionKind) + 3 + N_POS_BUCKETS + 1
_PRIOR_COUNT_NORM = 8.0                   # default episode cap


def observation_features(obs: Observation) -> np.ndarray:
    """Compact observation summary: step bucket, last-reward sign, hardware."""
    feats = np.zeros(OBS_DIM)
    feats[0] = 1.0
    bucket = min(obs.step_index, N_STEP_BUCKETS - 1)
    feats[1 + bucket] = 1.0
    if obs.history:
        feats[1 + N_STEP_BUCKETS] = float(np.sign(obs.history[-1].reward))
    feats[2 + N_STEP_BUCKETS] = math.log(obs.hardware.sm_count) / 10.0
    feats[3 + N_STEP_BUCKETS] = math.log(obs.hardware.memory_bandwidth_gbps) / 10.0
    return feats


def action_features(action: OptimizationAction, obs: Observation) -> np.ndarray:
    """Per-action summary: kind one-hot, region geometry, prior applications.

    Region geometry carries the normalized span length, start/end positions,
    and a one-hot position bucket: span length alone cannot tell apart
    same-sized regions, and a purely linear position score could only prefer
    the extremal region, never one in the middle of the kernel.
    """
    feats = np.zeros(ACT_DIM)
    kind_index = list(ActionKind).index(action.kind)
    feats[kind_index] = 1.0
    offset = len(ActionKind)
    if action.region is not None:
        n = max(1, obs.current_source.line_count)
        region = action.region
        feats[offset] = (region.end_line - region.start_line + 1) / n
        feats[offset + 1] = region.start_line / n
        feats[offset + 2] = region.end_line / n
        bucket = min(int((region.start_line - 1) / n * N_POS_BUCKETS),
                     N_POS_BUCKETS - 1)
        feats[offset + 3 + bucket] = 1.0
    prior = sum(1 for h in obs.history if h.action.kind is action.kind)
    feats[offset + 3 + N_POS_BUCKETS] = prior / _PRIOR_COUNT_NORM
    return feats


def action_feature_matrix(obs: Observation, catalog: ActionCatalog) -> np.ndarray:
    return np.stack([action_features(a, obs) for a in catalog.actions])


class FeaturizedPolicy:
    """Bilinear policy: logit(a) = act_feat(a) @ W @ obs_feat; value = u @ obs_feat.

    Zero initialization makes the starting policy uniform over any catalog.
    """

    def __init__(self, weights: np.ndarray | None = None,
                 value_weights: np.ndarray | None = None):
        self.weights = (np.zeros((ACT_DIM, OBS_DIM)) if weights is None
                        else np.asarray(weights, dtype=np.float64))
        self.value_weights = (np.zeros(OBS_DIM) if value_weights is None
                              else np.asarray(value_weights, dtype=np.float64))
        if self.weights.shape != (ACT_DIM, OBS_DIM):
            raise ValueError(f"weights must have shape {(ACT_DIM, OBS_DIM)}")
        if self.value_weights.shape != (OBS_DIM,):
            raise ValueError(f"value_weights must have shape {(OBS_DIM,)}")

    @property
    def trainable(self) -> bool:
        return True

    def action_logits(self, obs: Observation, catalog: ActionCatalog) -> np.ndarray:
        act = action_feature_matrix(obs, catalog)
        return act @ self.weights @ observation_features(obs)

    def logits_from_features(self, act_matrix: np.ndarray,
                             obs_feats: np.ndarray) -> np.ndarray:
        return act_matrix @ self.weights @ obs_feats

    def value(self, obs: Observation) -> float:
        return float(self.value_weights @ observation_features(obs))

    def save(self, path: str | Path, config_hash: str = "") -> None:
        payload = {
            "version": 1,
            "config_hash": config_hash,
            "obs_dim": OBS_DIM,
            "act_dim": ACT_DIM,
            "weights": self.weights.tolist(),
            "value_weights": self.value_weights.tolist(),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeaturizedPolicy":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        if payload.get("obs_dim") != OBS_DIM or payload.get("act_dim") != ACT_DIM:
            raise ValueError("checkpoint feature dimensions do not match this build")
        return cls(weights=np.array(payload["weights"]),
                   value_weights=np.array(payload["value_weights"]))


class UniformPolicy:
    """Flat scores; useful as a CLI fallback and in scripted pipelines."""

    trainable = False

    def action_logits(self, obs: Observation, catalog: ActionCatalog) -> np.ndarray:
        return np.zeros(len(catalog))

    def value(self, obs: Observation) -> float:
        return 0.0


# --------------------------------------------------------------------------
# Remote text-model backend
# --------------------------------------------------------------------------

class TokenScoringClient(Protocol):
    """Serving interface for a text model used as the planning policy."""

    def score(self, prompt: str, continuation: str) -> TokenScore:
        """Per-token log-probabilities of ``continuation`` given ``prompt``.

        Raise ScoringUnsupported when the endpoint cannot return token scores.
        """
        ...

    def generate(self, prompt: str) -> str:
        ...


class ScoringUnsupported(RuntimeError):
    pass


def render_observation_prompt(obs: Observation) -> str:
    """Deterministic text rendering of an observation for remote scoring."""
    history_lines = [
        f"  step {i}: {render_action(h.action)} -> {h.summary} (reward {h.reward:.4f})"
        for i, h in enumerate(obs.history)
    ] or ["  (none)"]
    hw = obs.hardware
    return (
        f"Task: {obs.task.description}\n"
        f"Hardware: {hw.name} ({hw.architecture}), {hw.sm_count} SMs, "
        f"{hw.memory_bandwidth_gbps} GB/s, {hw.fp32_tflops} FP32 TFLOPS\n"
        f"Step: {obs.step_index}\n"
        f"History:\n" + "\n".join(history_lines) + "\n"
        f"Current kernel:\n{obs.current_source.text}\n"
        f"Choose the next optimization action.\n"
    )


class RemoteTokenPolicy:
    """Scores catalog actions via token log-probabilities from a client.

    Per-action logit = joint log-probability of the rendered action string,
    normalized by token count so short action strings carry no length
    advantage. When the client cannot score tokens, falls back to
    generate-and-parse: the generated in-catalog action becomes a one-hot
    distribution, with up to ``max_generate_retries`` retries after the
    first attempt when the output is out of catalog.
    """

    trainable = False

    def __init__(self, client: TokenScoringClient, max_generate_retries: int = 3):
        self.client = client
        self.max_generate_retries = max_generate_retries

    def action_logits(self, obs: Observation, catalog: ActionCatalog) -> np.ndarray:
        prompt = render_observation_prompt(obs)
        try:
            logits = np.empty(len(catalog))
            for i, action in enumerate(catalog.actions):
                ts = self.client.score(prompt, render_action(action))
                logits[i] = ts.joint_logprob / max(1, len(ts.tokens))
            return logits
        except ScoringUnsupported:
            return self._generate_logits(prompt, catalog)
        except Exception as exc:
            raise PolicyBackendError(f"token scoring failed: {exc}") from exc

    def _generate_logits(self, prompt: str, catalog: ActionCatalog) -> np.ndarray:
        errors: list[str] = []
        for _ in range(1 + self.max_generate_retries):
            try:
                text = self.client.generate(prompt).strip()
                action = parse_action(text.splitlines()[-1] if text else "", catalog)
            except (OutOfCatalogError, ValueError, IndexError) as exc:
                errors.append(str(exc))
                continue
            except Exception as exc:
                raise PolicyBackendError(f"generation failed: {exc}") from exc
            logits = np.full(len(catalog), -30.0)
            logits[catalog.index_of(action)] = 0.0
            return logits
        raise PolicyBackendError(
            "generate-and-parse fallback exhausted retries: " + "; ".join(errors))


def policy_checkpoint_config_hash(config: dict) -> str:
    """Stable hash of a trainer config for checkpoint provenance."""
    return content_hash(json.dumps(config, sort_keys=True))
