"""Padded scenario batches and a double-buffered batch iterator."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from replay_engine.config.settings import ActionTable, SimConfig
from replay_engine.data.scenario import LightState, Scenario
from replay_engine.data.scenario_io import ScenarioIndex
from replay_engine.sim.dynamics import expert_action_indices, inverse_dynamics
from replay_engine.sim.roads import FeatureCloud, FrameBatch, RouteFrame, project_batch, stack_frames

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 400


@dataclass(frozen=True, eq=False)
class ScenarioBatch:
    """B scenarios padded to T steps, stored batch-major.

    Per-step arrays share the leading shape (B, T); mask[b, t] is 1 for
    t < num_steps[b] and 0 afterwards. Padded ego poses repeat the last
    logged pose, padded agents are invalid and padded light states are
    UNKNOWN. All arrays are read-only.
    """

    scenario_ids: Tuple[str, ...]
    dt: float
    num_steps: np.ndarray
    mask: np.ndarray
    ego_log: np.ndarray
    logged_steer: np.ndarray
    logged_accel: np.ndarray
    expert_actions: np.ndarray
    logged_s: np.ndarray
    speed_limit: np.ndarray
    goal: np.ndarray
    goal_s: np.ndarray
    agent_poses: np.ndarray
    agent_valid: np.ndarray
    agent_dims: np.ndarray
    frames: FrameBatch
    feature_points: np.ndarray
    feature_kind: np.ndarray
    feature_dir: np.ndarray
    feature_valid: np.ndarray
    stop_line_s: np.ndarray
    stop_line_valid: np.ndarray
    light_s: np.ndarray
    light_valid: np.ndarray
    light_states: np.ndarray

    @property
    def size(self) -> int:
        return len(self.scenario_ids)

    @property
    def max_steps(self) -> int:
        return self.mask.shape[1]

    @classmethod
    def from_scenarios(
        cls,
        scenarios: Sequence[Scenario],
        max_steps: int = DEFAULT_MAX_STEPS,
        sim: Optional[SimConfig] = None,
        actions: Optional[ActionTable] = None,
    ) -> "ScenarioBatch":
        """Pad and stage scenarios, including their static route geometry.

        Logged controls are recovered by inverse dynamics and snapped to the
        action table so replay episodes carry expert action labels.

        Raises:
            ValueError: If the list is empty, dt differs, or a scenario is longer than max_steps
        """
        if not scenarios:
            raise ValueError("cannot build an empty batch")
        dts = {float(s.dt) for s in scenarios}
        if len(dts) != 1:
            raise ValueError(f"scenarios in a batch must share dt, found {sorted(dts)}")
        dt = dts.pop()
        T = max_steps
        for s in scenarios:
            if s.num_steps > T:
                raise ValueError(f"scenario {s.scenario_id} has {s.num_steps} steps, longer than T={T}")

        B = len(scenarios)
        num_steps = np.array([s.num_steps for s in scenarios], dtype=np.int64)
        mask = np.arange(T)[None, :] < num_steps[:, None]

        sim = sim or SimConfig()
        actions = actions or ActionTable()
        point_spacing = sim.point_spacing

        ego_log = np.empty((B, T, 4))
        logged_steer = np.zeros((B, T))
        logged_accel = np.zeros((B, T))
        expert_actions = np.tile(np.array(actions.zero_index, dtype=np.int64), (B, T, 1))
        for b, s in enumerate(scenarios):
            n = s.num_steps
            log = np.asarray(s.ego_log, dtype=np.float64)
            ego_log[b, :n] = log
            ego_log[b, n:] = log[-1]
            accel, steer, _ = inverse_dynamics(log, dt, sim.wheelbase, sim.max_steer)
            logged_steer[b, :n] = steer
            logged_steer[b, n:] = steer[-1]
            logged_accel[b, :n - 1] = accel
            expert_actions[b, :n - 1] = expert_action_indices(log, dt, sim.wheelbase, actions, sim.max_steer)

        A = max(1, max(len(s.agents) for s in scenarios))
        agent_poses = np.zeros((B, A, T, 4))
        agent_valid = np.zeros((B, A, T), dtype=bool)
        agent_dims = np.ones((B, A, 2))
        for b, s in enumerate(scenarios):
            for a, agent in enumerate(s.agents):
                agent_poses[b, a, :s.num_steps] = agent.poses
                agent_valid[b, a, :s.num_steps] = agent.valid
                agent_dims[b, a] = (agent.length, agent.width)

        route_frames = [RouteFrame.from_route(s.route, point_spacing) for s in scenarios]
        frames = stack_frames(route_frames)

        clouds = [FeatureCloud.from_features(s.road_features, point_spacing) for s in scenarios]
        F = max(1, max(len(c.points) for c in clouds))
        feature_points = np.zeros((B, F, 2))
        feature_kind = np.zeros((B, F), dtype=np.int64)
        feature_dir = np.zeros((B, F), dtype=np.int64)
        feature_valid = np.zeros((B, F), dtype=bool)
        for b, c in enumerate(clouds):
            n = len(c.points)
            feature_points[b, :n] = c.points
            feature_kind[b, :n] = c.kind
            feature_dir[b, :n] = c.directionality
            feature_valid[b, :n] = True

        # Everything placed along s is projected in one batched call
        NS = max(1, max(len(s.stop_lines) for s in scenarios))
        NL = max(1, max(len(s.traffic_lights) for s in scenarios))
        query = np.zeros((B, T + 1 + NS + NL, 2))
        query[:, :T] = ego_log[:, :, :2]
        stop_line_valid = np.zeros((B, NS), dtype=bool)
        light_valid = np.zeros((B, NL), dtype=bool)
        light_states = np.full((B, NL, T), int(LightState.UNKNOWN), dtype=np.int8)
        for b, s in enumerate(scenarios):
            query[b, T] = s.goal
            for k, line in enumerate(s.stop_lines):
                query[b, T + 1 + k] = line.position
                stop_line_valid[b, k] = True
            for k, light in enumerate(s.traffic_lights):
                query[b, T + 1 + NS + k] = light.stop_point
                light_valid[b, k] = True
                light_states[b, k, :s.num_steps] = light.states
        s_all = project_batch(query, frames).s

        batch = cls(
            scenario_ids=tuple(s.scenario_id for s in scenarios),
            dt=dt,
            num_steps=num_steps,
            mask=mask,
            ego_log=ego_log,
            logged_steer=logged_steer,
            logged_accel=logged_accel,
            expert_actions=expert_actions,
            logged_s=s_all[:, :T],
            speed_limit=np.array([s.speed_limit for s in scenarios], dtype=np.float64),
            goal=np.array([np.asarray(s.goal, dtype=np.float64) for s in scenarios]),
            goal_s=s_all[:, T],
            agent_poses=agent_poses,
            agent_valid=agent_valid,
            agent_dims=agent_dims,
            frames=frames,
            feature_points=feature_points,
            feature_kind=feature_kind,
            feature_dir=feature_dir,
            feature_valid=feature_valid,
            stop_line_s=np.where(stop_line_valid, s_all[:, T + 1:T + 1 + NS], np.inf),
            stop_line_valid=stop_line_valid,
            light_s=np.where(light_valid, s_all[:, T + 1 + NS:], np.inf),
            light_valid=light_valid,
            light_states=light_states,
        )
        _freeze(batch)
        _freeze(frames)
        return batch


def _freeze(record) -> None:
    for f in fields(record):
        value = getattr(record, f.name)
        if isinstance(value, np.ndarray):
            value.flags.writeable = False


def load_scenarios(path: Union[str, Path], indices: Optional[Sequence[int]] = None) -> List[Scenario]:
    """Decode scenarios from a binary file, all of them or the given indices."""
    index = ScenarioIndex(path)
    order = range(len(index)) if indices is None else indices
    return index.read_many(order)


def load_batch(
    path: Union[str, Path],
    indices: Sequence[int],
    max_steps: int = DEFAULT_MAX_STEPS,
    sim: Optional[SimConfig] = None,
    actions: Optional[ActionTable] = None,
) -> ScenarioBatch:
    """Load scenarios by index into a padded batch whose rows follow indices.

    Raises:
        IndexError: If an index is out of range
        ValueError: If a scenario is longer than max_steps
    """
    return ScenarioBatch.from_scenarios(load_scenarios(path, indices), max_steps, sim, actions)


def batch_iterator(
    path: Union[str, Path],
    batch_size: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    prefetch: bool = True,
    sim: Optional[SimConfig] = None,
    actions: Optional[ActionTable] = None,
    indices: Optional[Sequence[int]] = None,
) -> Iterator[ScenarioBatch]:
    """Yield consecutive batches covering the dataset; the last may be short.

    With prefetch, one background thread decodes batch k+1 while the
    consumer works on batch k. Decode errors surface when the failing batch
    is requested.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    index = ScenarioIndex(path)
    order = list(range(len(index)) if indices is None else indices)
    if not order:
        raise ValueError(f"dataset {path} is empty")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def stage(chunk: List[int]) -> ScenarioBatch:
        return ScenarioBatch.from_scenarios(index.read_many(chunk), max_steps, sim, actions)

    logger.info(f"Serving {len(order)} scenarios from {path} in {len(chunks)} batches (prefetch={prefetch})")
    if not prefetch:
        for chunk in chunks:
            yield stage(chunk)
        return

    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="batch-stager") as pool:
        pending = pool.submit(stage, chunks[0])
        for k in range(len(chunks)):
            batch = pending.result()
            if k + 1 < len(chunks):
                pending = pool.submit(stage, chunks[k + 1])
            yield batch
