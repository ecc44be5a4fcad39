"""Synthetic one-step scoping environment (contextual-bandit structure).

Each episode is a single scoping decision: reset yields a (task, trust)
state, step takes a proposed exposure mask and scores it. Tool usage is
simulated: the scripted agent invokes the task's needed tools plus, with a
small per-tool probability, each additional exposed tool; it attempts exec
with a fixed probability when exec is exposed on a code task. The noise
probabilities are calibration knobs, config-exposed and zeroable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from agentwarden.domain import TaskType, Tool, ToolMask, TrustLevel
from agentwarden.governor import min_tool_set
from agentwarden.policy.mdp import (
    EpisodeOutcome,
    RewardParams,
    StateVector,
    apply_hard_constraints,
    reward,
)

TRUST_LEVELS = tuple(TrustLevel(i) for i in range(6))


class ProtocolError(RuntimeError):
    """step() called before reset()."""


@dataclass(frozen=True)
class EnvConfig:
    reward_params: RewardParams = field(default_factory=RewardParams)
    extra_tool_prob: float = 0.1
    exec_attempt_prob: float = 0.3

    def without_noise(self) -> EnvConfig:
        return EnvConfig(
            reward_params=self.reward_params, extra_tool_prob=0.0, exec_attempt_prob=0.0
        )


class ScopingEnv:
    """Seeded simulator; deterministic given seed and action sequence."""

    def __init__(self, seed: int = 0, config: EnvConfig | None = None) -> None:
        self.config = config or EnvConfig()
        self._rng = np.random.default_rng(seed)
        self._state: StateVector | None = None

    def reset(
        self, task: TaskType | None = None, trust: TrustLevel | None = None
    ) -> StateVector:
        """Start an episode; task/trust are sampled uniformly when omitted."""
        if task is None:
            task = tuple(TaskType)[int(self._rng.integers(0, len(TaskType)))]
        if trust is None:
            trust = TRUST_LEVELS[int(self._rng.integers(0, len(TRUST_LEVELS)))]
        self._state = StateVector(task=task, trust=trust)
        return self._state

    def step(self, mask: ToolMask) -> tuple[Fraction, EpisodeOutcome, bool]:
        """Score one proposed mask; episodes are single-step (done=True)."""
        if self._state is None:
            raise ProtocolError("step() before reset()")
        state = self._state
        self._state = None
        outcome = self._simulate(state, mask)
        return reward(outcome, self.config.reward_params), outcome, True

    def _simulate(self, state: StateVector, proposed: ToolMask) -> EpisodeOutcome:
        mask = apply_hard_constraints(proposed, state.trust)
        exposed = mask.popcount()
        if exposed == 0:
            return EpisodeOutcome(u_accuracy=0, ser=Fraction(0), block_count=0)
        needed = min_tool_set(state.task)
        u_accuracy = 1 if all(tool in mask for tool in needed) else 0
        invoked = {tool for tool in needed if tool in mask}
        for tool in mask.tools():
            if tool in needed:
                continue
            if self.config.extra_tool_prob > 0 and self._rng.random() < self.config.extra_tool_prob:
                invoked.add(tool)
        block_count = 0
        if (
            state.task is TaskType.CODE_EXECUTION
            and Tool.EXEC in mask
            and self.config.exec_attempt_prob > 0
            and self._rng.random() < self.config.exec_attempt_prob
        ):
            block_count = 1
        return EpisodeOutcome(
            u_accuracy=u_accuracy,
            ser=Fraction(len(invoked), exposed),
            block_count=block_count,
        )
