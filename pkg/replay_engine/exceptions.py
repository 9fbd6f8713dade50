"""Exception types raised across the replay engine."""

from typing import Optional


class ConfigError(ValueError):
    """Raised when a configuration file or object is invalid."""


class GeneratorError(ConfigError):
    """Raised when a generator configuration cannot produce valid scenarios."""


class ScenarioValidationError(ValueError):
    """Raised when a scenario violates one of its invariants."""

    def __init__(self, message: str, index: Optional[int] = None, invariant: str = ""):
        self.index = index
        self.invariant = invariant
        prefix = f"scenario[{index}]: " if index is not None else ""
        super().__init__(f"{prefix}{message}")


class ScenarioFormatError(ValueError):
    """Raised when a scenario file cannot be decoded."""


class CheckpointError(ValueError):
    """Raised when a checkpoint is malformed or does not match the config."""


class TrainingError(RuntimeError):
    """Raised when a training run cannot continue."""


class AllReduceTimeout(TrainingError):
    """Raised when a learner does not reach the gradient barrier in time."""


class WorkerDisconnected(TrainingError):
    """Raised when a worker context dies during a run."""
