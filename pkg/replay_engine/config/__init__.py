"""Configuration modules for the replay engine."""

from replay_engine.config.loader import load_config, parse_config, write_config
from replay_engine.config.scoring import ComfortWeights, MetricName, ScoreBounds
from replay_engine.config.settings import (
    ActionTable,
    BcConfig,
    ExperimentConfig,
    GeneratorConfig,
    ModelConfig,
    ModelPreset,
    OptimizerConfig,
    RewardConfig,
    RlConfig,
    SimConfig,
    TrainConfig,
    TrainPreset,
    config_hash,
)

__all__ = [
    "ActionTable",
    "BcConfig",
    "ComfortWeights",
    "ExperimentConfig",
    "GeneratorConfig",
    "MetricName",
    "ModelConfig",
    "ModelPreset",
    "OptimizerConfig",
    "RewardConfig",
    "RlConfig",
    "ScoreBounds",
    "SimConfig",
    "TrainConfig",
    "TrainPreset",
    "config_hash",
    "load_config",
    "parse_config",
    "write_config",
]
