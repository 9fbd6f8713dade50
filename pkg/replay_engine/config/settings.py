"""Typed configuration models for simulation, model, training and generation."""

import hashlib
import json
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from replay_engine.config.scoring import ComfortWeights, ScoreBounds


class _Settings(BaseModel):
    """Base for every config section; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class SimConfig(_Settings):
    """Simulator constants: timing, ego geometry, done thresholds, observation slots."""

    dt: float = 0.1
    max_steps: int = 400

    # Ego vehicle, rear-axle reference point
    wheelbase: float = 3.0
    ego_length: float = 4.5
    ego_width: float = 1.9
    ego_center_offset: float = 1.5  # rear axle to box center
    footprint_margin: float = 0.1  # per side
    max_steer: float = 0.55
    min_speed: float = 0.0
    max_speed: float = 30.0

    # Done signals
    goal_radius: float = 2.0
    stop_crossing_speed: float = 0.5
    stopped_speed: float = 0.1
    stop_window: float = 2.0
    off_route_patience: int = 0

    # Observation layout
    num_agents: int = 16
    num_road_points: int = 128
    num_route_points: int = 64
    agent_radius: float = 80.0
    road_radius: float = 60.0
    route_radius: float = 60.0
    point_spacing: float = 2.0

    @field_validator(
        "dt", "wheelbase", "ego_length", "ego_width", "max_steer", "max_speed",
        "goal_radius", "stop_window", "agent_radius", "road_radius", "route_radius",
        "point_spacing",
    )
    @classmethod
    def _check_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"must be > 0, got {value}")
        return value

    @field_validator("max_steps", "num_agents", "num_road_points", "num_route_points")
    @classmethod
    def _check_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "SimConfig":
        if self.min_speed < 0 or self.min_speed >= self.max_speed:
            raise ValueError("need 0 <= min_speed < max_speed")
        if self.footprint_margin < 0 or self.off_route_patience < 0:
            raise ValueError("footprint_margin and off_route_patience must be >= 0")
        return self

    @property
    def front_overhang(self) -> float:
        """Distance from the rear axle to the front bumper."""
        return self.ego_center_offset + 0.5 * self.ego_length


class RewardConfig(_Settings):
    """Dense reward weights and the terminal penalty for failure dones."""

    progress_weight: float = 1.0
    overspeed_weight: float = 0.1
    lateral_accel_weight: float = 0.02
    longitudinal_accel_weight: float = 0.02
    terminal_penalty: float = -10.0

    @field_validator(
        "progress_weight", "overspeed_weight", "lateral_accel_weight", "longitudinal_accel_weight"
    )
    @classmethod
    def _check_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"reward weight must be >= 0, got {value}")
        return value

    @field_validator("terminal_penalty")
    @classmethod
    def _check_penalty(cls, value: float) -> float:
        if value > 0:
            raise ValueError(f"terminal_penalty must be <= 0, got {value}")
        return value


class ActionTable(_Settings):
    """Discrete acceleration and steering-rate bins, one categorical head each."""

    accel_bins: List[float] = [-4.0, -2.0, -0.5, 0.0, 0.5, 2.0]
    steer_rate_bins: List[float] = [-0.4, -0.1, 0.0, 0.1, 0.4]

    @field_validator("accel_bins", "steer_rate_bins")
    @classmethod
    def _check_bins(cls, value: List[float]) -> List[float]:
        if len(value) < 2:
            raise ValueError("need at least two bins")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"bins must be strictly increasing: {value}")
        if 0.0 not in value:
            raise ValueError(f"bins must contain 0: {value}")
        return [float(v) for v in value]

    @property
    def num_accel(self) -> int:
        return len(self.accel_bins)

    @property
    def num_steer(self) -> int:
        return len(self.steer_rate_bins)

    @property
    def zero_index(self) -> Tuple[int, int]:
        """Index pair decoding to (0, 0)."""
        return self.accel_bins.index(0.0), self.steer_rate_bins.index(0.0)

    def accel_array(self) -> np.ndarray:
        return np.asarray(self.accel_bins, dtype=np.float64)

    def steer_rate_array(self) -> np.ndarray:
        return np.asarray(self.steer_rate_bins, dtype=np.float64)

    def decode(self, accel_index: int, steer_index: int) -> Tuple[float, float]:
        """Look up (acceleration, steering rate) for an index pair.

        Raises:
            IndexError: If either index is outside its bin list.
        """
        if not 0 <= accel_index < self.num_accel:
            raise IndexError(f"accel index {accel_index} out of range [0, {self.num_accel})")
        if not 0 <= steer_index < self.num_steer:
            raise IndexError(f"steer index {steer_index} out of range [0, {self.num_steer})")
        return self.accel_bins[accel_index], self.steer_rate_bins[steer_index]


class ModelPreset(str, Enum):
    """Named network sizes."""
    DESK = "desk"
    MEDIUM = "medium"
    LARGE = "large"


class ModelConfig(_Settings):
    """Encoder and head sizes of the policy/value network."""

    latent_dim: int = 128
    num_heads: int = 2
    trunk_depth: int = 2
    value_embed_dim: int = 32
    modality_order: List[str] = ["road_network", "route", "active_agent"]

    @field_validator("latent_dim", "num_heads", "value_embed_dim")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("trunk_depth")
    @classmethod
    def _check_depth(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"trunk_depth must be >= 1, got {value}")
        return value

    @field_validator("modality_order")
    @classmethod
    def _check_order(cls, value: List[str]) -> List[str]:
        if sorted(value) != ["active_agent", "road_network", "route"]:
            raise ValueError(f"modality_order must be a permutation of road_network, route, active_agent: {value}")
        return value

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if self.latent_dim % self.num_heads:
            raise ValueError(f"latent_dim {self.latent_dim} not divisible by num_heads {self.num_heads}")
        return self

    @classmethod
    def get_preset(cls, preset: ModelPreset) -> "ModelConfig":
        """Get a predefined network size."""
        if preset == ModelPreset.DESK:
            return cls()
        elif preset == ModelPreset.MEDIUM:
            return cls(latent_dim=256, num_heads=4, trunk_depth=3)
        elif preset == ModelPreset.LARGE:
            return cls(latent_dim=768, num_heads=8, trunk_depth=4)
        else:
            raise ValueError(f"Unknown model preset: {preset}")


class OptimizerConfig(_Settings):
    """Adaptive-moment optimizer constants."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @model_validator(mode="after")
    def _check_betas(self) -> "OptimizerConfig":
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("need 0 <= beta < 1 and eps > 0")
        return self


class BcConfig(_Settings):
    """Behavioral cloning hyperparameters."""

    batch_size: int = 32768
    lr: float = 2e-3
    value_loss_scale: float = 1e-4
    epochs: int = 20
    num_workers: int = 1
    checkpoint_every: int = 1

    @field_validator("batch_size", "epochs", "num_workers", "checkpoint_every")
    @classmethod
    def _check_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("lr")
    @classmethod
    def _check_lr(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"lr must be > 0, got {value}")
        return value

    @field_validator("value_loss_scale")
    @classmethod
    def _check_scale(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"value_loss_scale must be >= 0, got {value}")
        return value


class Transport(str, Enum):
    """How learners exchange gradients."""
    INPROCESS = "inprocess"
    SOCKET = "socket"


def parse_address(address: str) -> Tuple[str, int]:
    """Split "host:port" into its parts.

    Raises:
        ValueError: On a missing host or a port outside [0, 65535]
    """
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host, int(port)


class RlConfig(_Settings):
    """PPO / V-trace hyperparameters and worker layout.

    With the socket transport every process runs one learner (rank) and its
    actors; num_learners is then the number of processes and rank 0 hosts
    the all-reduce server at address.
    """

    batch_size: int = 512
    lr: float = 5.6e-5
    clip: float = 0.3
    value_loss_scale: float = 1e-2
    entropy_coef: float = 3e-2
    rho_bar: float = 1.0
    c_bar: float = 1.0
    sequence_length: int = 32
    replay_capacity: int = 4096
    num_learners: int = 1
    actors_per_learner: int = 2
    actor_batch_size: int = 16
    total_agent_steps: int = 2_000_000
    eval_interval_steps: int = 50_000
    eval_scenarios: int = 50
    allreduce_timeout: float = 120.0
    synchronous: bool = False
    transport: Transport = Transport.INPROCESS
    rank: int = 0
    address: str = "127.0.0.1:29500"

    @field_validator(
        "batch_size", "sequence_length", "replay_capacity", "num_learners",
        "actors_per_learner", "actor_batch_size", "total_agent_steps",
        "eval_interval_steps", "eval_scenarios",
    )
    @classmethod
    def _check_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("lr", "rho_bar", "c_bar", "allreduce_timeout")
    @classmethod
    def _check_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"must be > 0, got {value}")
        return value

    @field_validator("value_loss_scale", "entropy_coef")
    @classmethod
    def _check_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"must be >= 0, got {value}")
        return value

    @field_validator("clip")
    @classmethod
    def _check_clip(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError(f"clip must lie in (0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _check_capacity(self) -> "RlConfig":
        if self.replay_capacity < self.batch_size:
            raise ValueError(
                f"replay_capacity {self.replay_capacity} smaller than batch_size {self.batch_size}"
            )
        return self

    @field_validator("address")
    @classmethod
    def _check_address(cls, value: str) -> str:
        parse_address(value)
        return value

    @model_validator(mode="after")
    def _check_transport(self) -> "RlConfig":
        if not 0 <= self.rank < self.num_learners:
            raise ValueError(f"rank {self.rank} outside [0, {self.num_learners})")
        if self.transport == Transport.INPROCESS and self.rank != 0:
            raise ValueError("rank applies to the socket transport only")
        if self.transport == Transport.SOCKET and self.synchronous:
            raise ValueError("the synchronous loop runs every learner in one process; use the inprocess transport")
        return self


class TrainPreset(str, Enum):
    """Named training setups."""
    FULL = "full"
    DESK = "desk"


class TrainConfig(_Settings):
    """BC and RL settings plus the shared discount and optimizer."""

    gamma: float = 0.99
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig()
    bc: BcConfig = BcConfig()
    rl: RlConfig = RlConfig()

    @field_validator("gamma")
    @classmethod
    def _check_gamma(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {value}")
        return value

    @classmethod
    def get_preset(cls, preset: TrainPreset) -> "TrainConfig":
        """Get a predefined training setup."""
        if preset == TrainPreset.FULL:
            return cls()
        elif preset == TrainPreset.DESK:
            return cls(
                bc=BcConfig(batch_size=2048),
                rl=RlConfig(
                    batch_size=64,
                    replay_capacity=1024,
                    actor_batch_size=16,
                    eval_interval_steps=100_000,
                ),
            )
        else:
            raise ValueError(f"Unknown train preset: {preset}")


class GeneratorConfig(_Settings):
    """Synthetic scenario generation settings."""

    num_scenarios: int = 200
    segment_seconds: float = 30.0
    dt: float = 0.1
    max_steps: int = 400

    # Topology mix, relative weights
    straight_weight: float = 1.0
    curve_weight: float = 1.0
    junction_weight: float = 1.0

    lane_width: float = 3.5
    curve_radius_min: float = 40.0
    curve_radius_max: float = 80.0
    junction_radius: float = 15.0
    speed_limit_min: float = 10.0
    speed_limit_max: float = 15.0

    # Traffic, agents per 100 m per lane
    density: float = 2.0
    min_slot_spacing: float = 10.0
    lead_vehicle_prob: float = 0.5
    lead_min_gap: float = 15.0

    stop_line_prob: float = 0.3
    traffic_light_prob: float = 0.7
    yellow_seconds: float = 5.0
    light_phase_min: float = 8.0
    light_phase_max: float = 20.0

    verify: bool = True
    max_attempts: int = 20

    @field_validator(
        "segment_seconds", "dt", "lane_width", "curve_radius_min", "curve_radius_max",
        "junction_radius", "speed_limit_min", "speed_limit_max", "min_slot_spacing",
        "yellow_seconds", "light_phase_min", "light_phase_max",
    )
    @classmethod
    def _check_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"must be > 0, got {value}")
        return value

    @field_validator("straight_weight", "curve_weight", "junction_weight", "density", "lead_min_gap")
    @classmethod
    def _check_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"must be >= 0, got {value}")
        return value

    @field_validator("lead_vehicle_prob", "stop_line_prob", "traffic_light_prob")
    @classmethod
    def _check_probability(cls, value: float) -> float:
        if not 0 <= value <= 1:
            raise ValueError(f"probability must lie in [0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "GeneratorConfig":
        if self.num_scenarios < 1 or self.max_attempts < 1:
            raise ValueError("num_scenarios and max_attempts must be >= 1")
        if self.straight_weight + self.curve_weight + self.junction_weight <= 0:
            raise ValueError("at least one topology weight must be > 0")
        if self.curve_radius_min > self.curve_radius_max:
            raise ValueError("curve_radius_min > curve_radius_max")
        if self.speed_limit_min > self.speed_limit_max:
            raise ValueError("speed_limit_min > speed_limit_max")
        if self.light_phase_min > self.light_phase_max:
            raise ValueError("light_phase_min > light_phase_max")
        if self.num_steps > self.max_steps:
            raise ValueError(
                f"segment of {self.num_steps} steps exceeds max_steps {self.max_steps}"
            )
        return self

    @property
    def num_steps(self) -> int:
        """Recorded steps per scenario, both endpoints included."""
        return int(round(self.segment_seconds / self.dt)) + 1

    @classmethod
    def get_training_config(cls, **overrides) -> "GeneratorConfig":
        """30 s segments for training."""
        return cls(**{"segment_seconds": 30.0, "num_scenarios": 200, **overrides})

    @classmethod
    def get_evaluation_config(cls, **overrides) -> "GeneratorConfig":
        """10 s held-out segments for evaluation."""
        return cls(**{"segment_seconds": 10.0, "num_scenarios": 50, **overrides})


class ExperimentConfig(_Settings):
    """Every section of a run configuration."""

    sim: SimConfig = SimConfig()
    reward: RewardConfig = RewardConfig()
    actions: ActionTable = ActionTable()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    generator: GeneratorConfig = GeneratorConfig()
    bounds: ScoreBounds = ScoreBounds()
    comfort: ComfortWeights = ComfortWeights()


def config_hash(config: BaseModel) -> str:
    """Hex sha256 of the canonical JSON dump of a config model."""
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
