"""Adaptive-moment optimizer over flat parameter vectors."""

import logging
from typing import Any, Dict, Optional

import numpy as np

from replay_engine.config.settings import OptimizerConfig
from replay_engine.models.params import ModelParams

logger = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; moments share the parameters' dtype."""

    def __init__(self, num_params: int, lr: float, config: Optional[OptimizerConfig] = None, dtype=np.float32):
        self.lr = float(lr)
        self.config = config or OptimizerConfig()
        self.t = 0
        self.m = np.zeros(num_params, dtype=dtype)
        self.v = np.zeros(num_params, dtype=dtype)

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        """Apply one update to params in place."""
        if grads.num_params != self.m.size or params.num_params != self.m.size:
            raise ValueError(f"optimizer holds {self.m.size} moments, got {params.num_params} parameters")
        c = self.config
        g = grads.flat.astype(self.m.dtype, copy=False)
        self.t += 1
        self.m *= c.beta1
        self.m += (1.0 - c.beta1) * g
        self.v *= c.beta2
        self.v += (1.0 - c.beta2) * np.square(g)
        m_hat = self.m / (1.0 - c.beta1 ** self.t)
        v_hat = self.v / (1.0 - c.beta2 ** self.t)
        params.flat -= (self.lr * m_hat / (np.sqrt(v_hat) + c.eps)).astype(params.dtype, copy=False)

    def state_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "m": self.m.copy(), "v": self.v.copy()}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        m = np.asarray(state["m"])
        if m.shape != self.m.shape:
            raise ValueError(f"optimizer state for {m.size} parameters, expected {self.m.size}")
        self.t = int(state["t"])
        self.m = m.astype(self.m.dtype).copy()
        self.v = np.asarray(state["v"]).astype(self.v.dtype).copy()
        logger.debug(f"Restored optimizer state at t={self.t}")
