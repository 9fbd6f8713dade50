"""Per-scenario driving metrics, the scenario score and dataset aggregates.

Every stored metric lies in [0, 1], higher is better. The scenario score
maps each metric linearly onto [l, 1] and multiplies the results.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from replay_engine.config.scoring import ComfortWeights, MetricName, ScoreBounds
from replay_engine.data.scenario_loader import ScenarioBatch
from replay_engine.sim.done_signals import EVENT_REASONS, DoneReason
from replay_engine.sim.environment import EpisodeBatch

logger = logging.getLogger(__name__)

LOGGED_PROGRESS_EPS = 0.1

METRIC_COLUMNS = [
    "scenario_id",
    "relative_progress_raw",
    "relative_progress",
    "collision_free",
    "off_route_free",
    "stop_line_free",
    "traffic_light_free",
    "mixed_comfort",
    "scenario_score",
]

# MetricReport attribute per scored metric
_FIELDS = {
    MetricName.RELATIVE_PROGRESS: "relative_progress",
    MetricName.COLLISION_FREE: "collision_free",
    MetricName.OFF_ROUTE_FREE: "off_route_free",
    MetricName.STOP_LINE_FREE: "stop_line_free",
    MetricName.TRAFFIC_LIGHT_FREE: "traffic_light_free",
    MetricName.MIXED_COMFORT: "mixed_comfort",
}

_DONE_FLAGS = {
    DoneReason.COLLISION: "collision_free",
    DoneReason.OFF_ROUTE: "off_route_free",
    DoneReason.STOP_LINE: "stop_line_free",
    DoneReason.RED_LIGHT: "traffic_light_free",
}


class EvalMode(str, Enum):
    """DONES terminates on the first done signal as in training; NO_DONES
    runs every episode to the end and latches violation flags."""
    DONES = "dones"
    NO_DONES = "no-dones"


@dataclass(frozen=True)
class MetricReport:
    scenario_id: str
    relative_progress_raw: float
    relative_progress: float
    collision_free: float
    off_route_free: float
    stop_line_free: float
    traffic_light_free: float
    mixed_comfort: float
    scenario_score: float
    degenerate: bool = False

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row.pop("degenerate")
        return row


def map_score(s: float, lower: float) -> float:
    """Map a metric in [0, 1] linearly onto [lower, 1].

    Raises:
        ValueError: If s is outside [0, 1] or lower outside [0, 1)
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"metric must lie in [0, 1], got {s}")
    if not 0.0 <= lower < 1.0:
        raise ValueError(f"lower bound must lie in [0, 1), got {lower}")
    return s * (1.0 - lower) + lower


def scenario_score(metrics: Dict[MetricName, float], bounds: Optional[ScoreBounds] = None) -> float:
    """Product of the six mapped metrics.

    Args:
        metrics: Raw value per MetricName, each in [0, 1]
        bounds: Lower bounds; defaults to ScoreBounds()

    Raises:
        KeyError: If a metric is missing
    """
    bounds = bounds or ScoreBounds()
    score = 1.0
    for name, lower in bounds.by_metric().items():
        score *= map_score(float(metrics[name]), lower)
    return score


def relative_progress(agent_progress: np.ndarray, logged_progress: np.ndarray):
    """Ratio of agent to logged route progress.

    Returns:
        (raw ratio, ratio clamped to [0, 1], degenerate flag); degenerate
        rows (logged progress <= 0.1 m) get 0 for both ratios
    """
    agent_progress = np.asarray(agent_progress, dtype=np.float64)
    logged_progress = np.asarray(logged_progress, dtype=np.float64)
    degenerate = logged_progress <= LOGGED_PROGRESS_EPS
    raw = np.where(degenerate, 0.0, agent_progress / np.where(degenerate, 1.0, logged_progress))
    return raw, np.clip(raw, 0.0, 1.0), degenerate


def done_metrics(final_reason: np.ndarray, events: np.ndarray, mode: EvalMode) -> Dict[str, np.ndarray]:
    """Binary violation-free metrics per row.

    In DONES mode only the terminating reason counts; in NO_DONES mode every
    latched event flag does.
    """
    final_reason = np.asarray(final_reason)
    events = np.asarray(events, dtype=bool)
    columns = {reason: i for i, reason in enumerate(EVENT_REASONS)}
    out = {}
    for reason, name in _DONE_FLAGS.items():
        if EvalMode(mode) == EvalMode.DONES:
            triggered = final_reason == int(reason)
        else:
            triggered = events[..., columns[reason]]
        out[name] = np.where(triggered, 0.0, 1.0)
    return out


def mixed_comfort(
    accel_lon: np.ndarray,
    accel_lat: np.ndarray,
    mask: np.ndarray,
    dt: float,
    weights: Optional[ComfortWeights] = None,
) -> np.ndarray:
    """exp(-(w_a * mean(a_lon^2 + a_lat^2) + w_j * mean(j_lon^2 + j_lat^2))) per row.

    Jerk is the finite difference of acceleration between consecutive live
    steps. Rows without live steps score 1.

    Args:
        accel_lon: (B, T) longitudinal acceleration
        accel_lat: (B, T) lateral acceleration
        mask: (B, T) live steps
        dt: Step length
        weights: Acceleration and jerk weights
    """
    weights = weights or ComfortWeights()
    mask = np.asarray(mask, dtype=bool)
    a_lon = np.where(mask, accel_lon, 0.0)
    a_lat = np.where(mask, accel_lat, 0.0)
    n_live = mask.sum(axis=-1)
    accel_term = np.sum(np.square(a_lon) + np.square(a_lat), axis=-1) / np.maximum(n_live, 1)

    pairs = mask[..., 1:] & mask[..., :-1]
    j_lon = np.diff(a_lon, axis=-1) / dt
    j_lat = np.diff(a_lat, axis=-1) / dt
    jerk_sq = np.where(pairs, np.square(j_lon) + np.square(j_lat), 0.0)
    jerk_term = np.sum(jerk_sq, axis=-1) / np.maximum(pairs.sum(axis=-1), 1)
    return np.exp(-(weights.accel * accel_term + weights.jerk * jerk_term))


def episode_reports(
    episode: EpisodeBatch,
    batch: ScenarioBatch,
    mode: EvalMode,
    bounds: Optional[ScoreBounds] = None,
    weights: Optional[ComfortWeights] = None,
) -> List[MetricReport]:
    """One MetricReport per scenario of a rolled-out batch."""
    bounds = bounds or ScoreBounds()
    rows = np.arange(batch.size)
    last = batch.num_steps - 1
    logged = batch.logged_s[rows, last] - batch.logged_s[:, 0]
    agent = episode.final_route_s - episode.route_s[:, 0]
    raw, clamped, degenerate = relative_progress(agent, logged)
    flags = done_metrics(episode.final_reason, episode.events, mode)
    comfort = mixed_comfort(episode.accel_lon, episode.accel_lat, episode.mask, batch.dt, weights)

    reports = []
    for b, scenario_id in enumerate(batch.scenario_ids):
        values = {
            "relative_progress": float(clamped[b]),
            **{name: float(flag[b]) for name, flag in flags.items()},
            "mixed_comfort": float(comfort[b]),
        }
        score = scenario_score({m: values[f] for m, f in _FIELDS.items()}, bounds)
        reports.append(MetricReport(
            scenario_id=scenario_id,
            relative_progress_raw=float(raw[b]),
            scenario_score=score,
            degenerate=bool(degenerate[b]),
            **values,
        ))
    return reports


def aggregate(reports: Sequence[MetricReport]) -> Dict[str, Any]:
    """Means over non-degenerate scenarios plus failure rate and progress ratio.

    failure_rate counts a scenario once if it had a collision or an
    off-route event.
    """
    kept = [r for r in reports if not r.degenerate]
    degenerate_ids = sorted(r.scenario_id for r in reports if r.degenerate)
    result: Dict[str, Any] = {
        "num_scenarios": len(kept),
        "degenerate_count": len(degenerate_ids),
        "degenerate_ids": degenerate_ids,
    }
    if not kept:
        logger.warning("No non-degenerate scenarios to aggregate")
        return result
    for column in METRIC_COLUMNS[1:]:
        result[f"mean_{column}"] = float(np.mean([getattr(r, column) for r in kept]))
    failed = [not (r.collision_free and r.off_route_free) for r in kept]
    result["failure_rate"] = float(np.mean(failed))
    result["progress_ratio"] = result["mean_relative_progress_raw"]
    return result
