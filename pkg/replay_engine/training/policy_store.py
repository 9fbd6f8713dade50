"""Versioned, immutable parameter snapshots published by learners."""

import logging
import threading
from dataclasses import dataclass

from replay_engine.models.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicySnapshot:
    version: int
    params: ModelParams


def _frozen_copy(params: ModelParams) -> ModelParams:
    copy = params.copy()
    copy.flat.flags.writeable = False
    return copy


class PolicyStore:
    """Holds the latest snapshot; actors read it without touching learner state."""

    def __init__(self, params: ModelParams, version: int = 0):
        self._lock = threading.Lock()
        self._snapshot = PolicySnapshot(version, _frozen_copy(params))

    def publish(self, params: ModelParams) -> int:
        """Store a copy of params under the next version number."""
        snapshot = _frozen_copy(params)
        with self._lock:
            self._snapshot = PolicySnapshot(self._snapshot.version + 1, snapshot)
            version = self._snapshot.version
        logger.debug(f"Published policy v{version}")
        return version

    def latest(self) -> PolicySnapshot:
        with self._lock:
            return self._snapshot
