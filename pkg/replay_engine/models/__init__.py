"""Policy network: numerical layers, parameters, distributions, checkpoints and policies."""

from replay_engine.models.base_policy import BasePolicy, ConstantPolicy, NetworkPolicy
from replay_engine.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from replay_engine.models.network import ForwardOut, backward, forward
from replay_engine.models.params import ModelParams, build_index, init_params

__all__ = [
    "BasePolicy",
    "Checkpoint",
    "ConstantPolicy",
    "ForwardOut",
    "ModelParams",
    "NetworkPolicy",
    "backward",
    "build_index",
    "forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
]
