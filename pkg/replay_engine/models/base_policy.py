"""Policy interface and the concrete policies driven by the simulator."""

import logging
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from replay_engine.config.settings import ActionTable, ModelConfig
from replay_engine.models.checkpoint import Checkpoint
from replay_engine.models.distributions import greedy_actions, sample_actions
from replay_engine.models.network import forward
from replay_engine.models.params import ModelParams
from replay_engine.sim.environment import PolicyOutput
from replay_engine.sim.observations import ObservationBatch

logger = logging.getLogger(__name__)


class BasePolicy(ABC):
    """Abstract base class for driving policies.

    Calling a policy validates what act returns, so the simulator only
    ever sees in-range action pairs.
    """

    def __init__(self, actions: ActionTable, version: int = 0):
        """Initialize the policy.

        Args:
            actions: Action table the policy's indices refer to
            version: Version tag stored with every episode it drives
        """
        self.actions = actions
        self.version = version

    @abstractmethod
    def act(self, obs: ObservationBatch, uniforms: np.ndarray) -> PolicyOutput:
        """Choose actions for a batch of observations.

        Args:
            obs: Observations with one leading batch axis
            uniforms: (B, 2) uniforms for sampling

        Returns:
            PolicyOutput with (B, 2) actions, log-probs and values
        """

    def __call__(self, obs: ObservationBatch, uniforms: np.ndarray) -> PolicyOutput:
        return self._validate_output(self.act(obs, uniforms), obs.policy.batch_size)

    def _validate_output(self, out: PolicyOutput, batch_size: int) -> PolicyOutput:
        actions = np.asarray(out.actions)
        if actions.shape != (batch_size, 2):
            raise ValueError(f"policy returned actions of shape {actions.shape}, expected ({batch_size}, 2)")
        in_range = (
            (actions[:, 0] >= 0) & (actions[:, 0] < self.actions.num_accel)
            & (actions[:, 1] >= 0) & (actions[:, 1] < self.actions.num_steer)
        )
        if not in_range.all():
            raise ValueError("policy returned action indices outside the action table")
        return out


class ConstantPolicy(BasePolicy):
    """Always the same action pair; the zero action by default."""

    def __init__(self, actions: ActionTable, pair: Optional[Tuple[int, int]] = None):
        super().__init__(actions)
        self.pair = tuple(actions.zero_index if pair is None else pair)

    @classmethod
    def braking(cls, actions: ActionTable) -> "ConstantPolicy":
        """Hardest braking, straight wheels."""
        return cls(actions, (0, actions.zero_index[1]))

    def act(self, obs: ObservationBatch, uniforms: np.ndarray) -> PolicyOutput:
        n = obs.policy.batch_size
        return PolicyOutput(
            actions=np.tile(np.array(self.pair, dtype=np.int64), (n, 1)),
            log_probs=np.zeros(n),
            values=np.zeros(n),
        )


class NetworkPolicy(BasePolicy):
    """The perceiver network with a frozen parameter snapshot."""

    def __init__(
        self,
        params: ModelParams,
        model_config: ModelConfig,
        actions: ActionTable,
        greedy: bool = False,
        version: int = 0,
    ):
        super().__init__(actions, version)
        self.params = params.copy()
        self.params.flat.flags.writeable = False
        self.model_config = model_config
        self.greedy = greedy

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, greedy: bool = True) -> "NetworkPolicy":
        version = int(checkpoint.meta.get("policy_version", 0))
        return cls(checkpoint.params, checkpoint.model_config, checkpoint.actions, greedy, version)

    def act(self, obs: ObservationBatch, uniforms: np.ndarray) -> PolicyOutput:
        out = forward(self.params, obs, self.model_config)
        if self.greedy:
            actions, log_probs = greedy_actions(out.logits_accel, out.logits_steer)
        else:
            actions, log_probs = sample_actions(out.logits_accel, out.logits_steer, uniforms)
        return PolicyOutput(actions=actions, log_probs=log_probs.astype(np.float64), values=out.value.astype(np.float64))
