"""Fixed-shape ego-frame observations per modality.

Policy inputs and value-only inputs are separate types so goal distance and
remaining time can never reach the policy path.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from replay_engine.config.settings import SimConfig
from replay_engine.data.scenario import Directionality, FeatureKind, LightState
from replay_engine.sim.geometry import box_distance, to_local_frame, wrap_angle
from replay_engine.sim.roads import footprint_corners, nearest_points_batch, next_ahead_batch

if TYPE_CHECKING:
    from replay_engine.data.scenario_loader import ScenarioBatch
    from replay_engine.sim.environment import SimStateBatch

logger = logging.getLogger(__name__)

ACTIVE_AGENT_DIM = 11  # v, steer, stop dist+valid, light one-hot(4), light dist+valid, speed limit
AGENT_DIM = 6  # x, y, heading, speed, min box distance, valid
ROAD_DIM = 2 + len(FeatureKind) + len(Directionality) + 1
ROUTE_DIM = 5  # x, y, is_left, lane_valid, valid
VALUE_DIM = 2  # distance to goal along s, remaining steps


@dataclass(frozen=True)
class PolicyObservation:
    """Everything the policy sees; leading dims are (B,) or (B, T)."""

    active_agent: np.ndarray
    agents: np.ndarray
    agents_valid: np.ndarray
    road: np.ndarray
    road_valid: np.ndarray
    route: np.ndarray
    route_valid: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.active_agent.shape[0]

    def index(self, rows) -> "PolicyObservation":
        """Select rows (or any numpy index) along the leading axes."""
        return PolicyObservation(**{k: v[rows] for k, v in self.__dict__.items()})

    def astype(self, dtype) -> "PolicyObservation":
        return PolicyObservation(
            **{k: (v if v.dtype == bool else v.astype(dtype)) for k, v in self.__dict__.items()}
        )

    def flatten(self, lead: int) -> "PolicyObservation":
        """Merge the first `lead` axes into one."""
        return PolicyObservation(
            **{k: v.reshape((-1,) + v.shape[lead:]) for k, v in self.__dict__.items()}
        )


@dataclass(frozen=True)
class ValueObservation:
    """Inputs reserved for the value head."""

    features: np.ndarray

    def index(self, rows) -> "ValueObservation":
        return ValueObservation(self.features[rows])

    def flatten(self, lead: int) -> "ValueObservation":
        return ValueObservation(self.features.reshape((-1,) + self.features.shape[lead:]))


@dataclass(frozen=True)
class ObservationBatch:
    policy: PolicyObservation
    value: ValueObservation

    def index(self, rows) -> "ObservationBatch":
        return ObservationBatch(self.policy.index(rows), self.value.index(rows))

    def flatten(self, lead: int = 2) -> "ObservationBatch":
        """(B, T, ...) arrays to (B*T, ...)."""
        return ObservationBatch(self.policy.flatten(lead), self.value.flatten(lead))


def empty_observations(batch_size: int, sim: SimConfig, leading=()) -> ObservationBatch:
    """All-zero, all-invalid observations of the configured shapes."""
    lead = tuple(leading) + (batch_size,)
    return ObservationBatch(
        PolicyObservation(
            active_agent=np.zeros(lead + (ACTIVE_AGENT_DIM,)),
            agents=np.zeros(lead + (sim.num_agents, AGENT_DIM)),
            agents_valid=np.zeros(lead + (sim.num_agents,), dtype=bool),
            road=np.zeros(lead + (sim.num_road_points, ROAD_DIM)),
            road_valid=np.zeros(lead + (sim.num_road_points,), dtype=bool),
            route=np.zeros(lead + (sim.num_route_points, ROUTE_DIM)),
            route_valid=np.zeros(lead + (sim.num_route_points,), dtype=bool),
        ),
        ValueObservation(np.zeros(lead + (VALUE_DIM,))),
    )


def _one_hot(codes: np.ndarray, size: int) -> np.ndarray:
    return (codes[..., None] == np.arange(size)).astype(np.float64)


def _gather(values: np.ndarray, index: np.ndarray) -> np.ndarray:
    """values (B, F, ...) gathered at index (B, k), negative index -> row 0."""
    safe = np.where(index >= 0, index, 0)
    expand = safe.reshape(safe.shape + (1,) * (values.ndim - 2))
    return np.take_along_axis(values, expand, axis=1)


def _active_agent(state: "SimStateBatch", batch: "ScenarioBatch", t: np.ndarray) -> np.ndarray:
    B = batch.size
    rows = np.arange(B)
    _, stop_dist, stop_found = next_ahead_batch(state.route_s, batch.stop_line_s, batch.stop_line_valid)
    light_idx, light_dist, light_found = next_ahead_batch(state.route_s, batch.light_s, batch.light_valid)
    light_state = np.where(
        light_found, batch.light_states[rows, light_idx, t], int(LightState.UNKNOWN)
    )
    return np.concatenate(
        [
            state.v[:, None],
            state.steer[:, None],
            stop_dist[:, None],
            stop_found[:, None].astype(np.float64),
            _one_hot(light_state, len(LightState)),
            light_dist[:, None],
            light_found[:, None].astype(np.float64),
            batch.speed_limit[:, None],
        ],
        axis=1,
    )


def _other_agents(state: "SimStateBatch", batch: "ScenarioBatch", t: np.ndarray, sim: SimConfig):
    B = batch.size
    rows = np.arange(B)
    poses = batch.agent_poses[rows, :, t]  # (B, A, 4)
    valid = batch.agent_valid[rows, :, t]
    ego = footprint_corners(state.x, state.y, state.heading, sim.ego_length, sim.ego_width, sim.ego_center_offset)
    corners = footprint_corners(
        poses[..., 0], poses[..., 1], poses[..., 2],
        batch.agent_dims[..., 0], batch.agent_dims[..., 1], 0.0,
    )
    gap = box_distance(ego[:, None], corners)

    k = sim.num_agents
    key = np.where(valid & (gap <= sim.agent_radius), gap, np.inf)
    if key.shape[1] < k:
        key = np.concatenate([key, np.full((B, k - key.shape[1]), np.inf)], axis=1)
    order = np.argsort(key, axis=1, kind="stable")[:, :k]
    found = np.isfinite(np.take_along_axis(key, order, axis=1))
    order = np.where(found, order, -1)

    sel = _gather(poses, order)
    rel = to_local_frame(sel[..., 0], sel[..., 1], state.x[:, None], state.y[:, None], state.heading[:, None])
    rel_heading = wrap_angle(sel[..., 2] - state.heading[:, None])
    sel_gap = _gather(gap, order)
    feats = np.concatenate(
        [rel, rel_heading[..., None], sel[..., 3:4], sel_gap[..., None], found[..., None].astype(np.float64)],
        axis=-1,
    )
    return np.where(found[..., None], feats, 0.0), found


def _road(state: "SimStateBatch", batch: "ScenarioBatch", sim: SimConfig):
    ego_xy = np.stack([state.x, state.y], axis=1)
    index, _, found = nearest_points_batch(
        ego_xy, batch.feature_points, batch.feature_valid, sim.num_road_points, sim.road_radius
    )
    pts = _gather(batch.feature_points, index)
    rel = to_local_frame(pts[..., 0], pts[..., 1], state.x[:, None], state.y[:, None], state.heading[:, None])
    kind = _gather(batch.feature_kind, index)
    direction = _gather(batch.feature_dir, index)
    feats = np.concatenate(
        [rel, _one_hot(kind, len(FeatureKind)), _one_hot(direction, len(Directionality)),
         found[..., None].astype(np.float64)],
        axis=-1,
    )
    return np.where(found[..., None], feats, 0.0), found


def _route(state: "SimStateBatch", batch: "ScenarioBatch", sim: SimConfig):
    frames = batch.frames
    ego_xy = np.stack([state.x, state.y], axis=1)
    index, _, found = nearest_points_batch(
        ego_xy, frames.border_points, frames.border_valid, sim.num_route_points, sim.route_radius
    )
    pts = _gather(frames.border_points, index)
    rel = to_local_frame(pts[..., 0], pts[..., 1], state.x[:, None], state.y[:, None], state.heading[:, None])
    is_left = _gather(frames.border_left, index)
    lane = np.maximum(_gather(frames.border_lane, index), 0)
    s_start = np.take_along_axis(frames.s_start, lane, axis=1)
    s_end = np.take_along_axis(frames.s_end, lane, axis=1)
    lane_valid = (s_start <= state.route_s[:, None]) & (state.route_s[:, None] <= s_end)
    feats = np.concatenate(
        [rel, is_left[..., None].astype(np.float64), lane_valid[..., None].astype(np.float64),
         found[..., None].astype(np.float64)],
        axis=-1,
    )
    return np.where(found[..., None], feats, 0.0), found


def extract_observations(state: "SimStateBatch", batch: "ScenarioBatch", sim: SimConfig) -> ObservationBatch:
    """Ego-frame observations for every row; done rows are zeroed and invalid.

    Args:
        state: Current simulator state
        batch: Scenario batch being simulated
        sim: Slot counts and search radii

    Returns:
        ObservationBatch with policy and value-only parts
    """
    t = np.minimum(state.t, batch.max_steps - 1)
    active = _active_agent(state, batch, t)
    agents, agents_valid = _other_agents(state, batch, t, sim)
    road, road_valid = _road(state, batch, sim)
    route, route_valid = _route(state, batch, sim)

    remaining = np.maximum(batch.num_steps - 1 - state.t, 0).astype(np.float64)
    value = np.stack([batch.goal_s - state.route_s, remaining], axis=1)

    keep = ~state.done
    k1 = keep[:, None]
    k2 = keep[:, None, None]
    return ObservationBatch(
        PolicyObservation(
            active_agent=np.where(k1, active, 0.0),
            agents=np.where(k2, agents, 0.0),
            agents_valid=agents_valid & k1,
            road=np.where(k2, road, 0.0),
            road_valid=road_valid & k1,
            route=np.where(k2, route, 0.0),
            route_valid=route_valid & k1,
        ),
        ValueObservation(np.where(k1, value, 0.0)),
    )
