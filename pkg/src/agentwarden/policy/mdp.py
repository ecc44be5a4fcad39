"""State encoding, reward arithmetic, and hard-constraint projection.

Reward is computed in exact rational arithmetic; float conversion happens
only at the training boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from agentwarden.domain import TaskType, Tool, ToolMask, TrustLevel

EXEC_TRUST_THRESHOLD = Fraction(4, 5)


@dataclass(frozen=True)
class StateVector:
    """Task one-hot (6) concatenated with normalized trust (1); length 7."""

    task: TaskType
    trust: TrustLevel

    def to_array(self) -> np.ndarray:
        return np.array(
            [*self.task.one_hot(), float(self.trust.normalized)], dtype=np.float64
        )


@dataclass(frozen=True)
class RewardParams:
    """Weights for success, economy, and safety terms."""

    alpha: float = 1.0
    beta: float = 0.3
    gamma: float = 5.0

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class EpisodeOutcome:
    """Signals from one scoping episode.

    Episodes under an empty exposure mask record u_accuracy=0, ser=0 and
    block_count=0 (SER itself is undefined there; 0 is the penalty value).
    """

    u_accuracy: int
    ser: Fraction
    block_count: int

    def __post_init__(self) -> None:
        if self.u_accuracy not in (0, 1):
            raise ValueError("u_accuracy must be 0 or 1")
        if not 0 <= self.ser <= 1:
            raise ValueError("ser must lie in [0, 1]")
        if self.block_count < 0:
            raise ValueError("block_count must be non-negative")


def _exact(value: float) -> Fraction:
    # Decimal-literal weights (0.3, 5.0) convert exactly via their repr.
    return Fraction(repr(value))


def reward(outcome: EpisodeOutcome, params: RewardParams) -> Fraction:
    """alpha * success - beta * (1 - ser) - gamma * blocks, exact."""
    return (
        _exact(params.alpha) * outcome.u_accuracy
        - _exact(params.beta) * (1 - outcome.ser)
        - _exact(params.gamma) * outcome.block_count
    )


def apply_hard_constraints(
    mask: ToolMask,
    trust: TrustLevel,
    exec_threshold: Fraction = EXEC_TRUST_THRESHOLD,
) -> ToolMask:
    """Post-prediction projection: spawn/subagent bits always clear; the exec
    bit clears below the trust threshold. Idempotent; other bits untouched."""
    bits = mask.bits
    bits &= ~(1 << Tool.SESSIONS_SPAWN)
    bits &= ~(1 << Tool.SUBAGENTS)
    if trust.normalized < exec_threshold:
        bits &= ~(1 << Tool.EXEC)
    return ToolMask(bits)
