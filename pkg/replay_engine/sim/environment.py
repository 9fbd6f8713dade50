"""Batched log-replay environment: state, step, reward and fixed-length rollouts."""

import logging
import zlib
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from replay_engine.config.settings import ActionTable, RewardConfig, SimConfig
from replay_engine.data.scenario_loader import ScenarioBatch
from replay_engine.sim.done_signals import (
    EVENT_REASONS,
    FAILURE_REASONS,
    DoneReason,
    collisions_batch,
    detect_done,
    get_done_summary,
    log_done_summary,
    red_light_events,
    stop_line_events,
    update_stop_satisfied,
)
from replay_engine.sim.dynamics import EgoState, bicycle_step, decode_actions
from replay_engine.sim.observations import (
    ObservationBatch,
    PolicyObservation,
    ValueObservation,
    extract_observations,
)
from replay_engine.sim.roads import footprint_corners, footprint_on_route_batch, project_batch

logger = logging.getLogger(__name__)

_FAILURE_CODES = np.array(sorted(int(r) for r in FAILURE_REASONS))


@dataclass(frozen=True)
class SimStateBatch:
    """Structure-of-arrays simulator state, one entry per scenario.

    done_reason is NONE exactly when done is False. events holds the
    violation flags latched so far, in EVENT_REASONS column order.
    """

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    v: np.ndarray
    steer: np.ndarray
    t: np.ndarray
    done: np.ndarray
    done_reason: np.ndarray
    route_s: np.ndarray
    stop_satisfied: np.ndarray
    events: np.ndarray
    off_route_steps: np.ndarray
    rng_keys: np.ndarray
    seed: int = 0

    @property
    def ego(self) -> EgoState:
        return EgoState(self.x, self.y, self.heading, self.v, self.steer)

    def live(self, batch: ScenarioBatch) -> np.ndarray:
        """Rows that will advance on the next step."""
        return ~self.done & (self.t + 1 < batch.num_steps)


class PolicyOutput(NamedTuple):
    """What a policy returns for a batch of observations."""

    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray


PolicyFn = Callable[[ObservationBatch, np.ndarray], PolicyOutput]


class StepResult(NamedTuple):
    state: SimStateBatch
    rewards: np.ndarray
    events: np.ndarray
    reasons: np.ndarray
    accel_lon: np.ndarray
    accel_lat: np.ndarray


@dataclass(frozen=True)
class EpisodeBatch:
    """A fixed-length rollout, all per-step arrays shaped (B, T, ...).

    mask[b, t] is 1 while the row was live at step t, which includes the
    step producing its first done signal. final_obs is the (B, ...)
    observation of the state after the last step; bootstrap is its value,
    zero for rows that are done.
    """

    scenario_ids: Tuple[str, ...]
    obs: ObservationBatch
    final_obs: ObservationBatch
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    done_reasons: np.ndarray
    mask: np.ndarray
    bootstrap: np.ndarray
    step_events: np.ndarray
    events: np.ndarray
    final_reason: np.ndarray
    ego_trace: np.ndarray
    route_s: np.ndarray
    final_route_s: np.ndarray
    accel_lon: np.ndarray
    accel_lat: np.ndarray
    policy_version: int
    seed: int
    dones_enabled: bool

    @property
    def size(self) -> int:
        return self.rewards.shape[0]

    @property
    def agent_steps(self) -> int:
        return int(self.mask.sum())


def compute_reward(
    progress: np.ndarray,
    v: np.ndarray,
    steer: np.ndarray,
    accel: np.ndarray,
    speed_limit: np.ndarray,
    done_reason: np.ndarray,
    dt: float,
    wheelbase: float,
    config: RewardConfig,
) -> np.ndarray:
    """Dense reward of one transition plus the terminal penalty for failure dones.

    Args:
        progress: Route progress of the step in meters
        v: Speed after the step
        steer: Steering angle after the step
        accel: Commanded longitudinal acceleration
        speed_limit: Scenario speed limit
        done_reason: DoneReason code produced by the step
        dt: Step length
        wheelbase: Axle distance for lateral acceleration v^2 tan(steer) / L
        config: Reward weights

    Returns:
        Reward per row
    """
    lateral = np.square(v) * np.tan(steer) / wheelbase
    reward = (
        config.progress_weight * progress
        - config.overspeed_weight * np.maximum(0.0, v - speed_limit) * dt
        - config.lateral_accel_weight * np.square(lateral) * dt
        - config.longitudinal_accel_weight * np.square(accel) * dt
    )
    failed = np.isin(np.asarray(done_reason), _FAILURE_CODES)
    return reward + np.where(failed, config.terminal_penalty, 0.0)


def scenario_keys(scenario_ids) -> np.ndarray:
    """Stable per-scenario random-stream keys."""
    return np.array([zlib.crc32(sid.encode("utf-8")) for sid in scenario_ids], dtype=np.int64)


class ReplayEnvironment:
    """Steps every scenario of a batch at once while logged agents replay."""

    def __init__(
        self,
        sim: Optional[SimConfig] = None,
        reward: Optional[RewardConfig] = None,
        actions: Optional[ActionTable] = None,
    ):
        self.sim = sim or SimConfig()
        self.reward = reward or RewardConfig()
        self.actions = actions or ActionTable()

    def reset(self, batch: ScenarioBatch, seed: int = 0) -> SimStateBatch:
        """Place every ego on its logged initial pose."""
        B = batch.size
        pose = batch.ego_log[:, 0]
        front = batch.logged_s[:, 0] + self.sim.front_overhang
        satisfied = update_stop_satisfied(
            np.zeros(batch.stop_line_s.shape, dtype=bool), front, pose[:, 3],
            batch.stop_line_s, batch.stop_line_valid, self.sim.stopped_speed, self.sim.stop_window,
        )
        return SimStateBatch(
            x=pose[:, 0].copy(),
            y=pose[:, 1].copy(),
            heading=pose[:, 2].copy(),
            v=pose[:, 3].copy(),
            steer=batch.logged_steer[:, 0].copy(),
            t=np.zeros(B, dtype=np.int64),
            done=np.zeros(B, dtype=bool),
            done_reason=np.zeros(B, dtype=np.int8),
            route_s=batch.logged_s[:, 0].copy(),
            stop_satisfied=satisfied,
            events=np.zeros((B, len(EVENT_REASONS)), dtype=bool),
            off_route_steps=np.zeros(B, dtype=np.int64),
            rng_keys=scenario_keys(batch.scenario_ids),
            seed=int(seed),
        )

    def uniforms(self, state: SimStateBatch) -> np.ndarray:
        """(B, 2) uniforms for action sampling, a pure function of (seed, scenario, t)."""
        return np.stack([
            np.random.default_rng([state.seed, int(key), int(t)]).random(2)
            for key, t in zip(state.rng_keys, state.t)
        ])

    def observe(self, state: SimStateBatch, batch: ScenarioBatch) -> ObservationBatch:
        return extract_observations(state, batch, self.sim)

    def step(
        self,
        state: SimStateBatch,
        batch: ScenarioBatch,
        actions: np.ndarray,
        dones_enabled: bool = True,
    ) -> StepResult:
        """Advance all live rows by one step under (B, 2) discrete actions.

        Done and exhausted rows pass through unchanged with zero reward.

        Raises:
            ValueError: On an actions shape mismatch
        """
        actions = np.asarray(actions)
        if actions.shape != (batch.size, 2):
            raise ValueError(f"actions must have shape ({batch.size}, 2), got {actions.shape}")
        accel, steer_rate = decode_actions(actions, self.actions)
        sim = self.sim
        nxt = bicycle_step(
            state.ego, accel, steer_rate, batch.dt, sim.wheelbase,
            sim.max_steer, sim.min_speed, sim.max_speed,
        )
        return self._transition(state, batch, nxt, accel, dones_enabled)

    def replay_step(self, state: SimStateBatch, batch: ScenarioBatch, dones_enabled: bool = True) -> StepResult:
        """Advance live rows by placing the ego on its next logged pose."""
        rows = np.arange(batch.size)
        t_next = np.minimum(state.t + 1, batch.max_steps - 1)
        pose = batch.ego_log[rows, t_next]
        nxt = EgoState(pose[:, 0], pose[:, 1], pose[:, 2], pose[:, 3], batch.logged_steer[rows, t_next])
        accel = batch.logged_accel[rows, np.minimum(state.t, batch.max_steps - 1)]
        return self._transition(state, batch, nxt, accel, dones_enabled)

    def _transition(
        self,
        state: SimStateBatch,
        batch: ScenarioBatch,
        nxt: EgoState,
        accel: np.ndarray,
        dones_enabled: bool,
    ) -> StepResult:
        sim = self.sim
        rows = np.arange(batch.size)
        live = state.live(batch)
        t_next = np.minimum(state.t + 1, batch.max_steps - 1)

        s_new = project_batch(np.stack([nxt.x, nxt.y], axis=1)[:, None, :], batch.frames).s[:, 0]

        ego_box = footprint_corners(nxt.x, nxt.y, nxt.heading, sim.ego_length, sim.ego_width, sim.ego_center_offset)
        poses = batch.agent_poses[rows, :, t_next]
        agent_boxes = footprint_corners(
            poses[..., 0], poses[..., 1], poses[..., 2],
            batch.agent_dims[..., 0], batch.agent_dims[..., 1], 0.0,
        )
        collision = collisions_batch(ego_box, agent_boxes, batch.agent_valid[rows, :, t_next])

        on_route = footprint_on_route_batch(
            nxt.x, nxt.y, nxt.heading,
            (sim.ego_length, sim.ego_width, sim.ego_center_offset),
            batch.frames, sim.footprint_margin,
        )
        off_steps = np.where(on_route, 0, state.off_route_steps + 1)
        off_route = off_steps > sim.off_route_patience

        front_prev = state.route_s + sim.front_overhang
        front_cur = s_new + sim.front_overhang
        red = red_light_events(
            front_prev, front_cur, batch.light_s, batch.light_valid, batch.light_states[rows, :, t_next]
        )
        stop = stop_line_events(
            front_prev, front_cur, state.v, batch.stop_line_s, batch.stop_line_valid,
            state.stop_satisfied, sim.stop_crossing_speed,
        )
        goal = np.abs(batch.goal_s - s_new) <= sim.goal_radius

        events = np.stack([collision, off_route, red, stop, goal], axis=1) & live[:, None]
        if dones_enabled:
            reasons = np.where(live, detect_done(events), int(DoneReason.NONE)).astype(np.int8)
        else:
            reasons = np.zeros(batch.size, dtype=np.int8)
        newly_done = reasons != int(DoneReason.NONE)

        rewards = compute_reward(
            s_new - state.route_s, nxt.v, nxt.steer, accel, batch.speed_limit,
            reasons, batch.dt, sim.wheelbase, self.reward,
        )
        rewards = np.where(live, rewards, 0.0)
        accel_lat = np.where(live, np.square(nxt.v) * np.tan(nxt.steer) / sim.wheelbase, 0.0)
        accel_lon = np.where(live, accel, 0.0)

        satisfied = update_stop_satisfied(
            state.stop_satisfied, front_cur, nxt.v, batch.stop_line_s, batch.stop_line_valid,
            sim.stopped_speed, sim.stop_window,
        )

        def keep(new, old):
            mask = live.reshape(live.shape + (1,) * (np.ndim(old) - 1))
            return np.where(mask, new, old)

        new_state = replace(
            state,
            x=keep(nxt.x, state.x),
            y=keep(nxt.y, state.y),
            heading=keep(nxt.heading, state.heading),
            v=keep(nxt.v, state.v),
            steer=keep(nxt.steer, state.steer),
            t=np.where(live, state.t + 1, state.t),
            done=state.done | newly_done,
            done_reason=np.where(newly_done, reasons, state.done_reason).astype(np.int8),
            route_s=keep(s_new, state.route_s),
            stop_satisfied=keep(satisfied, state.stop_satisfied),
            events=state.events | events,
            off_route_steps=keep(off_steps, state.off_route_steps),
        )
        return StepResult(new_state, rewards, events, reasons, accel_lon, accel_lat)

    def rollout(
        self,
        batch: ScenarioBatch,
        policy_fn: Optional[PolicyFn] = None,
        max_steps: Optional[int] = None,
        seed: int = 0,
        dones_enabled: bool = True,
        replay_log: bool = False,
        policy_version: int = 0,
        log_summary: bool = False,
    ) -> EpisodeBatch:
        """Run exactly max_steps steps regardless of dones.

        By default the rollout runs as many steps as the longest scenario
        of the batch has log steps, so padding slots beyond it cost nothing.

        Args:
            batch: Scenarios to simulate
            policy_fn: Maps (observations, uniforms) to PolicyOutput; its
                parameters must stay fixed for the whole call. Optional in
                replay mode, where it only supplies value estimates.
            max_steps: Number of steps; at most the batch's padded length
            seed: Seed of the per-scenario sampling streams
            dones_enabled: False latches violations without terminating
            replay_log: Place the ego on its logged poses instead of acting
            policy_version: Version tag stored with the episode
            log_summary: Log a DoneSignals line at the end

        Returns:
            EpisodeBatch with observations, actions, rewards, masks and traces
        """
        if max_steps is None:
            T = min(max(int(batch.num_steps.max()), 1), batch.max_steps)
        else:
            T = int(max_steps)
        if not 0 < T <= batch.max_steps:
            raise ValueError(f"max_steps must lie in [1, {batch.max_steps}], got {T}")
        if policy_fn is None and not replay_log:
            raise ValueError("policy_fn is required unless replay_log is set")

        B = batch.size
        rows = np.arange(B)
        state = self.reset(batch, seed)
        obs_steps = []
        actions = np.zeros((B, T, 2), dtype=np.int64)
        log_probs = np.zeros((B, T))
        values = np.zeros((B, T))
        rewards = np.zeros((B, T))
        dones = np.zeros((B, T), dtype=bool)
        reasons = np.zeros((B, T), dtype=np.int8)
        mask = np.zeros((B, T), dtype=bool)
        step_events = np.zeros((B, T, len(EVENT_REASONS)), dtype=bool)
        ego_trace = np.zeros((B, T, 5))
        route_s = np.zeros((B, T))
        accel_lon = np.zeros((B, T))
        accel_lat = np.zeros((B, T))

        for k in range(T):
            obs = self.observe(state, batch)
            obs_steps.append(obs)
            live = state.live(batch)
            if policy_fn is not None:
                out = policy_fn(obs, self.uniforms(state))
                if np.shape(out.actions) != (B, 2):
                    raise ValueError(f"policy returned actions of shape {np.shape(out.actions)}, expected ({B}, 2)")
                values[:, k] = out.values
                log_probs[:, k] = out.log_probs
            if replay_log:
                actions[:, k] = batch.expert_actions[rows, np.minimum(state.t, batch.max_steps - 1)]
                log_probs[:, k] = 0.0 if policy_fn is None else log_probs[:, k]
                result = self.replay_step(state, batch, dones_enabled)
            else:
                actions[:, k] = out.actions
                result = self.step(state, batch, out.actions, dones_enabled)

            mask[:, k] = live
            ego_trace[:, k] = np.stack([state.x, state.y, state.heading, state.v, state.steer], axis=1)
            route_s[:, k] = state.route_s
            rewards[:, k] = result.rewards
            reasons[:, k] = result.reasons
            dones[:, k] = result.reasons != int(DoneReason.NONE)
            step_events[:, k] = result.events
            accel_lon[:, k] = result.accel_lon
            accel_lat[:, k] = result.accel_lat
            state = result.state

        final = self.observe(state, batch)
        obs_steps.append(final)
        bootstrap = np.zeros(B)
        if policy_fn is not None:
            bootstrap = np.where(state.done, 0.0, policy_fn(final, self.uniforms(state)).values)
        stacked = _stack_observations(obs_steps)

        episode = EpisodeBatch(
            scenario_ids=batch.scenario_ids,
            obs=stacked.index(np.s_[:, :T]),
            final_obs=stacked.index(np.s_[:, T]),
            actions=actions,
            log_probs=log_probs,
            values=values,
            rewards=rewards,
            dones=dones,
            done_reasons=reasons,
            mask=mask,
            bootstrap=bootstrap,
            step_events=step_events,
            events=state.events,
            final_reason=state.done_reason.copy(),
            ego_trace=ego_trace,
            route_s=route_s,
            final_route_s=state.route_s.copy(),
            accel_lon=accel_lon,
            accel_lat=accel_lat,
            policy_version=int(policy_version),
            seed=int(seed),
            dones_enabled=dones_enabled,
        )
        if log_summary:
            source = "replay" if replay_log else f"policy v{policy_version}"
            log_done_summary(get_done_summary(episode.final_reason), source=source)
        return episode


def _stack_observations(steps) -> ObservationBatch:
    """Stack per-step (B, ...) observations into (B, T, ...) float32 arrays."""
    def stack(name: str, part: str) -> np.ndarray:
        arrays = [getattr(getattr(o, part), name) for o in steps]
        out = np.stack(arrays, axis=1)
        return out if out.dtype == bool else out.astype(np.float32)

    policy_fields = PolicyObservation.__dataclass_fields__
    return ObservationBatch(
        PolicyObservation(**{name: stack(name, "policy") for name in policy_fields}),
        ValueObservation(stack("features", "value")),
    )
