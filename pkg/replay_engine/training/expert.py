"""Expert dataset for behavioral cloning, built by replaying the logs.

Each row is one live step of a logged trajectory: the observation, the
snapped expert action and the discounted return of the simulator's
rewards from that step on.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from replay_engine.config.settings import ExperimentConfig
from replay_engine.data.scenario_io import ScenarioIndex
from replay_engine.data.scenario_loader import DEFAULT_MAX_STEPS, batch_iterator
from replay_engine.exceptions import TrainingError
from replay_engine.sim.environment import ReplayEnvironment
from replay_engine.sim.observations import ObservationBatch, PolicyObservation, ValueObservation
from replay_engine.training.returns import discounted_return

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpertDataset:
    obs: ObservationBatch
    actions: np.ndarray
    returns: np.ndarray
    num_scenarios: int

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    def rows(self, index: np.ndarray) -> "ExpertDataset":
        return ExpertDataset(self.obs.index(index), self.actions[index], self.returns[index], self.num_scenarios)


def _concat(parts: List[ObservationBatch]) -> ObservationBatch:
    fields = parts[0].policy.__dict__
    return ObservationBatch(
        PolicyObservation(**{k: np.concatenate([p.policy.__dict__[k] for p in parts]) for k in fields}),
        ValueObservation(np.concatenate([p.value.features for p in parts])),
    )


def build_expert_dataset(
    data_path: Union[str, Path],
    config: ExperimentConfig,
    batch_size: int = 32,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> ExpertDataset:
    """Replay every scenario's log and collect (observation, action, return) rows.

    Raises:
        TrainingError: If the dataset holds no scenarios or no live steps
    """
    env = ReplayEnvironment(config.sim, config.reward, config.actions)
    parts, actions, returns = [], [], []
    num_scenarios = 0
    if len(ScenarioIndex(data_path)) == 0:
        raise TrainingError(f"expert dataset {data_path} is empty")
    for batch in batch_iterator(data_path, batch_size, max_steps, sim=config.sim, actions=config.actions):
        episode = env.rollout(batch, replay_log=True)
        live = episode.mask
        returns.append(discounted_return(episode.rewards, live, config.train.gamma)[live])
        actions.append(episode.actions[live])
        parts.append(episode.obs.index(live))
        num_scenarios += batch.size
    if sum(len(a) for a in actions) == 0:
        raise TrainingError(f"expert dataset {data_path} has no live steps")

    dataset = ExpertDataset(
        obs=_concat(parts),
        actions=np.concatenate(actions).astype(np.int64),
        returns=np.concatenate(returns),
        num_scenarios=num_scenarios,
    )
    logger.info(f"Built expert dataset: {dataset.size} steps from {num_scenarios} scenarios")
    return dataset
