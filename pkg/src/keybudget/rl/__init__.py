"""Reinforcement-learning environment, trainer and trained-policy adapter."""

from .env import EnvState, KeyBudgetEnv, Observation, RewardWeights, combine_reward, env_reset, env_step, reward_terms
from .trainer import (
    RLPolicy,
    TrainerConfig,
    features,
    load_policy,
    load_policy_params,
    save_policy,
    train_policy,
)

__all__ = [
    "EnvState",
    "KeyBudgetEnv",
    "Observation",
    "RLPolicy",
    "RewardWeights",
    "TrainerConfig",
    "combine_reward",
    "env_reset",
    "env_step",
    "features",
    "load_policy",
    "load_policy_params",
    "reward_terms",
    "save_policy",
    "train_policy",
]
