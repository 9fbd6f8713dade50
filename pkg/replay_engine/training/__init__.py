"""Behavioral cloning, PPO with V-trace, replay tables and gradient all-reduce."""

from replay_engine.training.allreduce import InProcessAllReduce, allreduce_mean
from replay_engine.training.bc import BcResult, dataset_loss, run_bc
from replay_engine.training.expert import ExpertDataset, build_expert_dataset
from replay_engine.training.losses import bc_loss, ppo_loss
from replay_engine.training.optimizer import Adam
from replay_engine.training.replay import ReplayTable, SequenceBatch, TransitionSequence, split_episode
from replay_engine.training.returns import VTraceOut, discounted_return, vtrace
from replay_engine.training.rl import RlResult, RlTrainer, run_rl

__all__ = [
    "Adam",
    "BcResult",
    "ExpertDataset",
    "InProcessAllReduce",
    "ReplayTable",
    "RlResult",
    "RlTrainer",
    "SequenceBatch",
    "TransitionSequence",
    "VTraceOut",
    "allreduce_mean",
    "bc_loss",
    "build_expert_dataset",
    "dataset_loss",
    "discounted_return",
    "ppo_loss",
    "run_bc",
    "run_rl",
    "split_episode",
    "vtrace",
]
