"""Kinematic bicycle model about the rear axle and the discrete action table."""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from replay_engine.config.settings import ActionTable
from replay_engine.sim.geometry import wrap_angle

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class EgoState:
    """Ego pose, speed and steering angle; fields are scalars or (B,) arrays."""

    x: ArrayLike
    y: ArrayLike
    heading: ArrayLike
    v: ArrayLike
    steer: ArrayLike


def bicycle_step(
    state: EgoState,
    accel: ArrayLike,
    steer_rate: ArrayLike,
    dt: float,
    wheelbase: float,
    max_steer: float = 0.55,
    min_speed: float = 0.0,
    max_speed: float = 30.0,
) -> EgoState:
    """One explicit-Euler step of the kinematic bicycle model.

    Every update reads the old state; speed and steering are clamped after
    integration and the heading is wrapped to (-pi, pi].

    Args:
        state: Current state
        accel: Longitudinal acceleration in m/s^2
        steer_rate: Steering-angle rate in rad/s
        dt: Step length in seconds
        wheelbase: Axle distance L in meters

    Returns:
        The next state
    """
    if dt <= 0 or wheelbase <= 0:
        raise ValueError(f"dt and wheelbase must be > 0, got dt={dt}, wheelbase={wheelbase}")
    x, y, heading, v, steer = state.x, state.y, state.heading, state.v, state.steer
    return EgoState(
        x=x + v * np.cos(heading) * dt,
        y=y + v * np.sin(heading) * dt,
        heading=wrap_angle(heading + (v / wheelbase) * np.tan(steer) * dt),
        v=np.clip(v + accel * dt, min_speed, max_speed),
        steer=np.clip(steer + steer_rate * dt, -max_steer, max_steer),
    )


def decode_action(index_pair: Tuple[int, int], table: ActionTable) -> Tuple[float, float]:
    """Map an (accel index, steer index) pair to (a, steering rate)."""
    return table.decode(int(index_pair[0]), int(index_pair[1]))


def decode_actions(actions: np.ndarray, table: ActionTable) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized decode of (B, 2) index pairs.

    Raises:
        IndexError: If any index is out of range
    """
    actions = np.asarray(actions)
    if actions.ndim != 2 or actions.shape[1] != 2:
        raise ValueError(f"actions must have shape (B, 2), got {actions.shape}")
    accel_idx, steer_idx = actions[:, 0], actions[:, 1]
    if np.any((accel_idx < 0) | (accel_idx >= table.num_accel)):
        raise IndexError(f"accel index out of range [0, {table.num_accel})")
    if np.any((steer_idx < 0) | (steer_idx >= table.num_steer)):
        raise IndexError(f"steer index out of range [0, {table.num_steer})")
    return table.accel_array()[accel_idx], table.steer_rate_array()[steer_idx]


def snap_to_bins(values: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Index of the nearest bin per value; ties go to the lower bin."""
    values = np.asarray(values, dtype=np.float64)
    bins = np.asarray(bins, dtype=np.float64)
    return np.argmin(np.abs(values[..., None] - bins), axis=-1)


def inverse_dynamics(
    ego_log: np.ndarray,
    dt: float,
    wheelbase: float,
    max_steer: float = 0.55,
    min_speed_for_steer: float = 0.5,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover controls from a logged rear-axle trajectory by finite differences.

    Below min_speed_for_steer the heading change says nothing about steering,
    so the previous steering angle is held.

    Args:
        ego_log: (n, 4) rows of (x, y, heading, v)
        dt: Step length
        wheelbase: Axle distance L

    Returns:
        (accel (n-1,), steer (n,), steer_rate (n-1,))
    """
    log = np.asarray(ego_log, dtype=np.float64)
    n = len(log)
    if n < 2:
        raise ValueError("need at least two logged poses")
    v = log[:, 3]
    accel = np.diff(v) / dt
    yaw = wrap_angle(np.diff(log[:, 2]))

    steer = np.zeros(n)
    previous = 0.0
    for t in range(n - 1):
        if v[t] >= min_speed_for_steer:
            previous = float(np.clip(np.arctan(wheelbase * yaw[t] / (v[t] * dt)), -max_steer, max_steer))
        steer[t] = previous
    steer[n - 1] = steer[n - 2]
    steer_rate = np.diff(steer) / dt
    return accel, steer, steer_rate


def expert_action_indices(
    ego_log: np.ndarray,
    dt: float,
    wheelbase: float,
    table: ActionTable,
    max_steer: float = 0.55,
) -> np.ndarray:
    """Logged controls snapped to the action table, shape (n-1, 2)."""
    accel, _, steer_rate = inverse_dynamics(ego_log, dt, wheelbase, max_steer)
    return np.stack(
        [snap_to_bins(accel, table.accel_array()), snap_to_bins(steer_rate, table.steer_rate_array())],
        axis=1,
    )
