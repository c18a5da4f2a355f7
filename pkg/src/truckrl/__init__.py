"""Tactical decision making for an autonomous electric truck on a highway.

A small, dependency-light reinforcement learning stack: a deterministic
multi-lane traffic simulator, operating-cost rewards, hierarchical and
flat action interfaces, and from-scratch DQN / A2C / PPO agents, all
reproducible to the bit from a seed.
"""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, config_hash, load_config
from .env import DrivingEnv, make_env
from .evaluate import MetricsTable, run_rule_based_ego, run_validation
from .rewards import StepSummary, energy_step, make_reward_fn
from .sim import Simulator
from .training import run_training, train_single_seed

__all__ = [
    "ConfigError", "RunConfig", "config_hash", "load_config",
    "DrivingEnv", "make_env",
    "MetricsTable", "run_rule_based_ego", "run_validation",
    "StepSummary", "energy_step", "make_reward_fn",
    "Simulator",
    "run_training", "train_single_seed",
    "__version__",
]
