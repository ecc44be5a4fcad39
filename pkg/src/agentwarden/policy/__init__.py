"""Exposure-policy learning: synthetic environment, reward, PPO training,
hard-constraint projection, collapse detection, and mask selection."""

from agentwarden.policy.engine import (
    Policy,
    PolicyEngine,
    PolicyLoadError,
    detect_collapse,
    load_policy,
    mean_grid_ser,
    save_policy,
    state_grid,
)
from agentwarden.policy.env import EnvConfig, ScopingEnv
from agentwarden.policy.mdp import (
    EpisodeOutcome,
    RewardParams,
    StateVector,
    apply_hard_constraints,
    reward,
)
from agentwarden.policy.ppo import PPOConfig, TrainingDiverged, train

__all__ = [
    "EnvConfig",
    "EpisodeOutcome",
    "PPOConfig",
    "Policy",
    "PolicyEngine",
    "PolicyLoadError",
    "RewardParams",
    "ScopingEnv",
    "StateVector",
    "TrainingDiverged",
    "apply_hard_constraints",
    "detect_collapse",
    "load_policy",
    "mean_grid_ser",
    "reward",
    "save_policy",
    "state_grid",
    "train",
]
