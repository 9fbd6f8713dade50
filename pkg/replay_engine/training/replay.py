"""Fixed-length transition sequences and the per-learner replay table."""

import logging
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from replay_engine.exceptions import TrainingError
from replay_engine.sim.environment import EpisodeBatch
from replay_engine.sim.observations import ObservationBatch, PolicyObservation, ValueObservation

logger = logging.getLogger(__name__)


def _pad(values: np.ndarray, length: int) -> np.ndarray:
    if values.shape[0] >= length:
        return values[:length]
    pad = np.zeros((length - values.shape[0],) + values.shape[1:], dtype=values.dtype)
    return np.concatenate([values, pad], axis=0)


def _map_obs(obs: ObservationBatch, fn) -> ObservationBatch:
    return ObservationBatch(
        PolicyObservation(**{k: fn(v) for k, v in obs.policy.__dict__.items()}),
        ValueObservation(fn(obs.value.features)),
    )


def _episode_row_obs(episode: EpisodeBatch, b: int) -> ObservationBatch:
    """Row b's T step observations followed by its post-rollout one."""
    final = episode.final_obs.index(b)
    return ObservationBatch(
        PolicyObservation(**{
            k: np.concatenate([v[b], final.policy.__dict__[k][None]]) for k, v in episode.obs.policy.__dict__.items()
        }),
        ValueObservation(np.concatenate([episode.obs.value.features[b], final.value.features[None]])),
    )


@dataclass(frozen=True)
class TransitionSequence:
    """L consecutive steps of one scenario's episode.

    obs carries L + 1 entries; the last one is the state after step L - 1
    and only feeds the bootstrap value. Steps past the episode end are
    zero-padded with mask 0.
    """

    scenario_id: str
    start: int
    obs: ObservationBatch
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    behavior_values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    bootstrap_value: float
    policy_version: int

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def terminated(self) -> bool:
        return bool(self.dones.any())


def split_episode(episode: EpisodeBatch, length: int) -> List[TransitionSequence]:
    """Cut every row of an episode into consecutive length-L sequences.

    Cutting stops at the first chunk without a live step, so no sequence is
    entirely masked. Sequences never span two scenarios.
    """
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    T = episode.rewards.shape[1]
    sequences = []
    for b, scenario_id in enumerate(episode.scenario_ids):
        row_obs = _episode_row_obs(episode, b)
        for t0 in range(0, T, length):
            if not episode.mask[b, t0]:
                break
            t1 = t0 + length
            window = slice(t0, t1)
            dones = _pad(episode.dones[b, window], length)
            if dones.any():
                bootstrap = 0.0
            elif t1 < T:
                bootstrap = float(episode.values[b, t1])
            else:
                bootstrap = float(episode.bootstrap[b])
            sequences.append(TransitionSequence(
                scenario_id=scenario_id,
                start=t0,
                obs=_map_obs(row_obs, lambda v: _pad(v[t0:t1 + 1], length + 1)),
                actions=_pad(episode.actions[b, window], length),
                behavior_log_probs=_pad(episode.log_probs[b, window], length),
                behavior_values=_pad(episode.values[b, window], length),
                rewards=_pad(episode.rewards[b, window], length),
                dones=dones,
                mask=_pad(episode.mask[b, window], length),
                bootstrap_value=bootstrap,
                policy_version=episode.policy_version,
            ))
    return sequences


@dataclass(frozen=True)
class SequenceBatch:
    """N sequences stacked along a new leading axis; obs is (N, L + 1, ...)."""

    obs: ObservationBatch
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    policy_versions: np.ndarray

    @property
    def size(self) -> int:
        return self.rewards.shape[0]

    @property
    def length(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def from_sequences(cls, sequences: List[TransitionSequence]) -> "SequenceBatch":
        if not sequences:
            raise ValueError("cannot batch zero sequences")
        lengths = {s.length for s in sequences}
        if len(lengths) != 1:
            raise ValueError(f"sequences of mixed lengths {sorted(lengths)}")
        first = sequences[0].obs
        policy = {
            k: np.stack([s.obs.policy.__dict__[k] for s in sequences]) for k in first.policy.__dict__
        }
        return cls(
            obs=ObservationBatch(
                PolicyObservation(**policy),
                ValueObservation(np.stack([s.obs.value.features for s in sequences])),
            ),
            actions=np.stack([s.actions for s in sequences]).astype(np.int64),
            behavior_log_probs=np.stack([s.behavior_log_probs for s in sequences]),
            rewards=np.stack([s.rewards for s in sequences]),
            dones=np.stack([s.dones for s in sequences]).astype(bool),
            mask=np.stack([s.mask for s in sequences]).astype(bool),
            policy_versions=np.array([s.policy_version for s in sequences], dtype=np.int64),
        )


class ReplayTable:
    """Bounded FIFO of sequences shared by a group of actors and one learner.

    The oldest sequence is dropped when a push exceeds capacity.
    """

    def __init__(self, capacity: int, name: str = "replay"):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.name = name
        self._items: deque = deque(maxlen=capacity)
        self._cond = threading.Condition()
        self._closed = False
        self.total_pushed = 0

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)

    def push(self, sequences: Iterable[TransitionSequence]) -> int:
        """Append sequences; returns how many were added."""
        added = 0
        with self._cond:
            for seq in sequences:
                self._items.append(seq)
                added += 1
            self.total_pushed += added
            self._cond.notify_all()
        logger.debug(f"{self.name}: pushed {added}, size {len(self._items)}/{self.capacity}")
        return added

    def sample(
        self,
        n: int,
        rng: np.random.Generator,
        timeout: Optional[float] = None,
    ) -> List[TransitionSequence]:
        """Draw n distinct sequences, waiting until the table holds enough.

        Returns an empty list when the table is closed first.

        Raises:
            ValueError: If n exceeds the capacity
            TrainingError: If the wait times out
        """
        if n > self.capacity:
            raise ValueError(f"cannot sample {n} sequences from a table of capacity {self.capacity}")
        with self._cond:
            self._cond.wait_for(lambda: len(self._items) >= n or self._closed, timeout)
            if len(self._items) < n:
                if self._closed:
                    return []
                raise TrainingError(f"{self.name}: only {len(self._items)} of {n} sequences after {timeout}s")
            picks = rng.choice(len(self._items), size=n, replace=False)
            return [self._items[int(i)] for i in picks]

    def close(self) -> None:
        """Wake every waiting sampler; later samples return what is available or nothing."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()
