"""Clipped-surrogate policy-gradient training (PPO) for the exposure policy.

One-step episodes make this a contextual bandit: discount is 1.0 and the
advantage is reward minus the learned value baseline. Training is
single-threaded and bitwise deterministic for a given seed (BLAS pinned to
one thread for the duration of a run).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from agentwarden.domain import TOOL_COUNT, ToolMask
from agentwarden.policy.engine import Policy, detect_collapse
from agentwarden.policy.env import EnvConfig, ScopingEnv
from agentwarden.policy.network import (
    bernoulli_entropy,
    init_params,
    log_prob,
    policy_backward,
    policy_forward,
    sigmoid,
    value_backward,
    value_forward,
)


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; no policy is emitted."""


@dataclass(frozen=True)
class PPOConfig:
    total_steps: int = 50_000
    rollout_steps: int = 2_048
    minibatch_size: int = 64
    epochs: int = 10
    learning_rate: float = 3e-4
    clip_ratio: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True
    seed: int = 0


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float) -> None:
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _mask_from_action(action: np.ndarray) -> ToolMask:
    bits = 0
    for i in range(TOOL_COUNT):
        if action[i] > 0.5:
            bits |= 1 << i
    return ToolMask(bits)


def train(
    env_config: EnvConfig | None = None,
    ppo_config: PPOConfig | None = None,
) -> Policy:
    """Train the exposure policy on the synthetic environment.

    Tasks and trust levels are sampled uniformly per episode. Deterministic
    given the seed; raises TrainingDiverged (never emits a policy) if the
    loss goes non-finite.
    """
    env_config = env_config or EnvConfig()
    cfg = ppo_config or PPOConfig()

    root = np.random.SeedSequence(cfg.seed)
    params_ss, env_ss, sample_ss = root.spawn(3)
    params = init_params(np.random.default_rng(params_ss))
    env = ScopingEnv(seed=env_ss, config=env_config)
    rng = np.random.default_rng(sample_ss)
    adam = _Adam(params, cfg.learning_rate)

    steps_done = 0
    with threadpool_limits(limits=1):
        while steps_done < cfg.total_steps:
            batch = min(cfg.rollout_steps, cfg.total_steps - steps_done)
            states = np.empty((batch, 7), dtype=np.float64)
            actions = np.empty((batch, TOOL_COUNT), dtype=np.float64)
            rewards = np.empty(batch, dtype=np.float64)
            for i in range(batch):
                state = env.reset()
                states[i] = state.to_array()
                logits, _ = policy_forward(params, states[i : i + 1])
                probs = sigmoid(logits)[0]
                action = (rng.random(TOOL_COUNT) < probs).astype(np.float64)
                actions[i] = action
                step_reward, _, _ = env.step(_mask_from_action(action))
                rewards[i] = float(step_reward)
            steps_done += batch

            logits, _ = policy_forward(params, states)
            logp_old = log_prob(logits, actions)
            values_old, _ = value_forward(params, states)
            advantages = rewards - values_old
            if cfg.normalize_advantage and batch > 1:
                advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

            for _ in range(cfg.epochs):
                perm = rng.permutation(batch)
                for start in range(0, batch, cfg.minibatch_size):
                    idx = perm[start : start + cfg.minibatch_size]
                    _update_minibatch(
                        params,
                        adam,
                        cfg,
                        states[idx],
                        actions[idx],
                        logp_old[idx],
                        advantages[idx],
                        rewards[idx],
                    )

    policy = Policy(
        params={k: v.copy() for k, v in params.items()},
        version="awp-1",
        trained_steps=steps_done,
        seed=cfg.seed,
    )
    policy.collapse_flag = detect_collapse(policy)
    return policy


def _update_minibatch(
    params: dict[str, np.ndarray],
    adam: _Adam,
    cfg: PPOConfig,
    states: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
) -> None:
    n = len(states)
    logits, pcache = policy_forward(params, states)
    logp = log_prob(logits, actions)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * advantages
    entropy = bernoulli_entropy(logits)
    policy_loss = -np.minimum(surr1, surr2).mean() - cfg.entropy_coef * entropy.mean()

    values, vcache = value_forward(params, states)
    value_loss = cfg.value_coef * np.mean((values - returns) ** 2)
    if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
        raise TrainingDiverged(
            f"non-finite loss (policy={policy_loss!r}, value={value_loss!r}, "
            f"ratio range=[{ratio.min()!r}, {ratio.max()!r}])"
        )

    # Gradient of the clipped surrogate: flows through ratio only where the
    # unclipped branch is active (surr1 <= surr2 covers ties exactly).
    probs = sigmoid(logits)
    unclipped = surr1 <= surr2
    coeff = np.where(unclipped, -ratio * advantages / n, 0.0)
    dlogits = coeff[:, None] * (actions - probs)
    dlogits += (cfg.entropy_coef / n) * logits * probs * (1.0 - probs)
    grads = policy_backward(params, pcache, dlogits)

    dvalues = 2.0 * cfg.value_coef * (values - returns) / n
    grads.update(value_backward(params, vcache, dvalues))
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDiverged("non-finite gradient")
    _clip_grads(grads, cfg.max_grad_norm)
    adam.step(params, grads)
