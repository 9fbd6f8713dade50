"""Replay Engine

Batched log-replay driving simulation with behavioral cloning and PPO
training of a perceiver driving policy.
"""

__version__ = "0.1.0"
__author__ = "Replay Engine Developers"

from .config.settings import ExperimentConfig
from .evaluation.evaluator import PolicyEvaluator
from .sim.environment import ReplayEnvironment

__all__ = ["ExperimentConfig", "PolicyEvaluator", "ReplayEnvironment"]
