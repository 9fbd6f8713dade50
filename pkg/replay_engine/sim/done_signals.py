"""Done signals - collision, off-route, red light, stop line and goal checks."""

import logging
from enum import IntEnum
from typing import Dict, Sequence

import numpy as np

from replay_engine.data.scenario import LightState
from replay_engine.sim.geometry import boxes_overlap

logger = logging.getLogger(__name__)


class DoneReason(IntEnum):
    """Why an episode terminated; NONE while it is running."""
    NONE = 0
    COLLISION = 1
    OFF_ROUTE = 2
    RED_LIGHT = 3
    STOP_LINE = 4
    GOAL_REACHED = 5


# Column order of event flag arrays, which is also the termination priority
EVENT_REASONS = (
    DoneReason.COLLISION,
    DoneReason.OFF_ROUTE,
    DoneReason.RED_LIGHT,
    DoneReason.STOP_LINE,
    DoneReason.GOAL_REACHED,
)
FAILURE_REASONS = frozenset(
    {DoneReason.COLLISION, DoneReason.OFF_ROUTE, DoneReason.RED_LIGHT, DoneReason.STOP_LINE}
)


def collision_check(ego_bbox: np.ndarray, agent_bboxes: np.ndarray, agent_valid: np.ndarray = None) -> bool:
    """Whether the ego rectangle overlaps any valid agent rectangle.

    Args:
        ego_bbox: (4, 2) corners
        agent_bboxes: (N, 4, 2) corners
        agent_valid: Optional (N,) flags; all valid when omitted

    Returns:
        True on any separating-axis overlap, touching included
    """
    agent_bboxes = np.asarray(agent_bboxes, dtype=np.float64).reshape(-1, 4, 2)
    if len(agent_bboxes) == 0:
        return False
    hits = boxes_overlap(np.asarray(ego_bbox, dtype=np.float64)[None], agent_bboxes)
    if agent_valid is not None:
        hits &= np.asarray(agent_valid, dtype=bool)
    return bool(hits.any())


def collisions_batch(ego_corners: np.ndarray, agent_corners: np.ndarray, agent_valid: np.ndarray) -> np.ndarray:
    """(B,) flags for ego (B, 4, 2) against agents (B, A, 4, 2) with validity (B, A)."""
    hits = boxes_overlap(ego_corners[:, None], agent_corners)
    return (hits & agent_valid).any(axis=1)


def crossings(prev_front_s: np.ndarray, cur_front_s: np.ndarray, item_s: np.ndarray, item_valid: np.ndarray) -> np.ndarray:
    """(B, N) flags: the front bumper passed item_s during this step."""
    return item_valid & (prev_front_s[:, None] < item_s) & (item_s <= cur_front_s[:, None])


def red_light_events(
    prev_front_s: np.ndarray,
    cur_front_s: np.ndarray,
    light_s: np.ndarray,
    light_valid: np.ndarray,
    states_at_crossing: np.ndarray,
) -> np.ndarray:
    """(B,) flags: a signal stop point was crossed while its state was red.

    Unknown states count as green here.
    """
    crossed = crossings(prev_front_s, cur_front_s, light_s, light_valid)
    return (crossed & (states_at_crossing == int(LightState.RED))).any(axis=1)


def stop_line_events(
    prev_front_s: np.ndarray,
    cur_front_s: np.ndarray,
    crossing_speed: np.ndarray,
    stop_s: np.ndarray,
    stop_valid: np.ndarray,
    stop_satisfied: np.ndarray,
    speed_threshold: float,
) -> np.ndarray:
    """(B,) flags: a stop line was crossed too fast without a prior stop."""
    crossed = crossings(prev_front_s, cur_front_s, stop_s, stop_valid)
    violated = crossed & ~stop_satisfied & (crossing_speed[:, None] > speed_threshold)
    return violated.any(axis=1)


def update_stop_satisfied(
    stop_satisfied: np.ndarray,
    front_s: np.ndarray,
    v: np.ndarray,
    stop_s: np.ndarray,
    stop_valid: np.ndarray,
    stopped_speed: float,
    window: float,
) -> np.ndarray:
    """Latch stop lines at which the ego stood still within the approach window."""
    gap = stop_s - front_s[:, None]
    stopped_here = stop_valid & (v[:, None] < stopped_speed) & (gap >= 0.0) & (gap <= window)
    return stop_satisfied | stopped_here


def detect_done(events: np.ndarray) -> np.ndarray:
    """First event in priority order per row.

    Args:
        events: (B, 5) or (5,) flags in EVENT_REASONS column order

    Returns:
        DoneReason codes, NONE where no event fired
    """
    events = np.asarray(events, dtype=bool)
    codes = np.array([int(r) for r in EVENT_REASONS])
    any_event = events.any(axis=-1)
    first = np.argmax(events, axis=-1)
    return np.where(any_event, codes[first], int(DoneReason.NONE))


def get_done_summary(reasons: Sequence[int]) -> Dict[str, int]:
    """Counts of terminal reasons across episodes.

    Args:
        reasons: One final DoneReason code per episode

    Returns:
        Dictionary with one count per reason plus 'clean' and 'total'
    """
    reasons = np.asarray(reasons, dtype=np.int64)
    summary = {r.name.lower(): int(np.sum(reasons == int(r))) for r in EVENT_REASONS}
    summary["clean"] = int(np.sum(reasons == int(DoneReason.NONE)))
    summary["total"] = int(len(reasons))
    return summary


def log_done_summary(summary: Dict[str, int], source: str = "unknown") -> None:
    """Log a done summary in one line.

    Args:
        summary: Output of get_done_summary
        source: What produced the episodes
    """
    logger.info(
        f"DoneSignals: collision={summary['collision']}, "
        f"off_route={summary['off_route']}, "
        f"red_light={summary['red_light']}, "
        f"stop_line={summary['stop_line']}, "
        f"goal_reached={summary['goal_reached']}, "
        f"clean={summary['clean']}, "
        f"source={source}"
    )
