"""Scenario data model: a recorded traffic log with route, map features and signals."""

import logging
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np

from replay_engine.exceptions import ScenarioValidationError
from replay_engine.sim.geometry import point_segment_distance, segments_intersect

logger = logging.getLogger(__name__)


class LightState(IntEnum):
    """Traffic-light state codes as stored in scenario files."""
    RED = 0
    YELLOW = 1
    GREEN = 2
    UNKNOWN = 3


class FeatureKind(IntEnum):
    """Road feature annotation types."""
    LANE_MARKING = 0
    CROSSWALK = 1
    STOP_LINE = 2
    BIKE_LANE_BOUNDARY = 3
    ROAD_EDGE = 4


class Directionality(IntEnum):
    """Travel direction annotation of a road feature."""
    NONE = 0
    FORWARD = 1
    BACKWARD = 2
    BOTH = 3


def _values_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return a == b


class _ArrayRecord:
    """Field-wise equality that understands numpy arrays."""

    def __eq__(self, other) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        return all(_values_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    __hash__ = None


@dataclass(eq=False)
class LoggedAgent(_ArrayRecord):
    """A non-ego road user replayed exactly as recorded.

    poses holds (x, y, heading, v) of the box center per step; valid flags
    the steps at which the agent was perceived.
    """

    agent_id: str
    length: float
    width: float
    poses: np.ndarray
    valid: np.ndarray


@dataclass(eq=False)
class RouteLane(_ArrayRecord):
    lane_id: int
    left_border: np.ndarray
    right_border: np.ndarray
    valid_interval: Tuple[float, float]


@dataclass(eq=False)
class Route(_ArrayRecord):
    lanes: List[RouteLane]

    @property
    def length(self) -> float:
        return max(lane.valid_interval[1] for lane in self.lanes)


@dataclass(eq=False)
class RoadFeature(_ArrayRecord):
    points: np.ndarray
    kind: FeatureKind
    directionality: Directionality = Directionality.NONE


@dataclass(eq=False)
class TrafficLight(_ArrayRecord):
    """A signal with its stop point and one state code per step."""

    signal_id: int
    stop_point: np.ndarray
    states: np.ndarray


@dataclass(eq=False)
class StopLine(_ArrayRecord):
    points: np.ndarray
    position: np.ndarray


@dataclass(eq=False)
class Scenario(_ArrayRecord):
    """One recorded driving segment.

    ego_log rows are (x, y, heading, v) of the ego rear axle.
    """

    scenario_id: str
    num_steps: int
    dt: float
    ego_log: np.ndarray
    agents: List[LoggedAgent]
    route: Route
    road_features: List[RoadFeature] = field(default_factory=list)
    traffic_lights: List[TrafficLight] = field(default_factory=list)
    stop_lines: List[StopLine] = field(default_factory=list)
    speed_limit: float = 13.9
    goal: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.float32))


def _fail(message: str, index: Optional[int], invariant: str) -> None:
    raise ScenarioValidationError(f"{message} [{invariant}]", index=index, invariant=invariant)


def _check_polyline(points: np.ndarray, what: str, index: Optional[int]) -> None:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        _fail(f"{what} must be a polyline of >= 2 points, got shape {points.shape}", index, "polyline_points")
    if not np.all(np.isfinite(points)):
        _fail(f"{what} has non-finite coordinates", index, "finite")


def _borders_cross(left: np.ndarray, right: np.ndarray) -> bool:
    la, lb = left[:-1, None, :], left[1:, None, :]
    ra, rb = right[None, :-1, :], right[None, 1:, :]
    return bool(segments_intersect(la, lb, ra, rb).any())


def validate_route(route: Route, index: Optional[int] = None) -> None:
    """Check lane border and coverage invariants of a route."""
    if not route.lanes:
        _fail("route has no lanes", index, "route_coverage")
    ids = [lane.lane_id for lane in route.lanes]
    if len(set(ids)) != len(ids):
        _fail(f"duplicate lane ids {ids}", index, "lane_id_unique")

    intervals = []
    for lane in route.lanes:
        what = f"lane {lane.lane_id}"
        _check_polyline(lane.left_border, f"{what} left border", index)
        _check_polyline(lane.right_border, f"{what} right border", index)
        if len(lane.left_border) != len(lane.right_border):
            _fail(f"{what} borders have different point counts", index, "border_pairing")
        if _borders_cross(np.asarray(lane.left_border, float), np.asarray(lane.right_border, float)):
            _fail(f"{what} left and right borders intersect", index, "borders_disjoint")
        center = 0.5 * (np.asarray(lane.left_border, float) + np.asarray(lane.right_border, float))
        if np.any(np.linalg.norm(np.diff(center, axis=0), axis=1) <= 0):
            _fail(f"{what} centerline has repeated points", index, "arc_length_increasing")
        s_start, s_end = lane.valid_interval
        if not s_start < s_end:
            _fail(f"{what} valid interval {lane.valid_interval} is empty", index, "valid_interval")
        intervals.append((float(s_start), float(s_end)))

    # Union of valid intervals must cover [0, route length]
    intervals.sort()
    if intervals[0][0] > 0.0:
        _fail(f"no valid lane at s=0 (first interval starts at {intervals[0][0]})", index, "route_coverage")
    reach = intervals[0][1]
    for start, end in intervals[1:]:
        if start > reach:
            _fail(f"no valid lane on s in ({reach}, {start})", index, "route_coverage")
        reach = max(reach, end)


def _goal_near_route(scenario: Scenario) -> bool:
    goal = np.asarray(scenario.goal, dtype=np.float64)
    best = np.inf
    widest = 0.0
    for lane in scenario.route.lanes:
        left = np.asarray(lane.left_border, dtype=np.float64)
        right = np.asarray(lane.right_border, dtype=np.float64)
        center = 0.5 * (left + right)
        best = min(best, point_segment_distance(goal[None, :], center[:-1], center[1:]).min())
        widest = max(widest, np.linalg.norm(left - right, axis=1).max())
    return best <= widest


def validate_scenario(scenario: Scenario, index: Optional[int] = None) -> None:
    """Raise ScenarioValidationError naming the first violated invariant.

    Args:
        scenario: Scenario to check
        index: Position of the scenario in its file or list, for messages
    """
    n = scenario.num_steps
    if n < 2:
        _fail(f"num_steps must be >= 2, got {n}", index, "num_steps>=2")
    if not scenario.dt > 0:
        _fail(f"dt must be > 0, got {scenario.dt}", index, "dt>0")
    if not scenario.speed_limit > 0:
        _fail(f"speed_limit must be > 0, got {scenario.speed_limit}", index, "speed_limit>0")

    ego_log = np.asarray(scenario.ego_log)
    if ego_log.shape != (n, 4):
        _fail(f"ego_log shape {ego_log.shape} != ({n}, 4)", index, "ego_log_length")
    if not np.all(np.isfinite(ego_log)):
        _fail("ego_log has non-finite values", index, "finite")

    seen_ids = set()
    for agent in scenario.agents:
        if agent.agent_id in seen_ids:
            _fail(f"duplicate agent id {agent.agent_id}", index, "agent_id_unique")
        seen_ids.add(agent.agent_id)
        if not (agent.length > 0 and agent.width > 0):
            _fail(f"agent {agent.agent_id} dims must be > 0", index, "agent_dims>0")
        if np.asarray(agent.poses).shape != (n, 4) or np.asarray(agent.valid).shape != (n,):
            _fail(f"agent {agent.agent_id} arrays must cover all {n} steps", index, "agent_pose_length")

    validate_route(scenario.route, index)

    for feature in scenario.road_features:
        _check_polyline(feature.points, "road feature", index)
        try:
            FeatureKind(int(feature.kind))
            Directionality(int(feature.directionality))
        except ValueError:
            _fail(f"road feature has invalid kind/directionality", index, "enum_member")

    for light in scenario.traffic_lights:
        states = np.asarray(light.states)
        if states.shape != (n,):
            _fail(f"light {light.signal_id} states must cover all {n} steps", index, "light_state_length")
        if states.size and (states.min() < 0 or states.max() > int(LightState.UNKNOWN)):
            _fail(f"light {light.signal_id} has invalid state codes", index, "enum_member")
        if np.asarray(light.stop_point).shape != (2,):
            _fail(f"light {light.signal_id} stop point must be (x, y)", index, "stop_point")

    for line in scenario.stop_lines:
        _check_polyline(line.points, "stop line", index)
        if np.asarray(line.position).shape != (2,):
            _fail("stop line position must be (x, y)", index, "stop_point")

    if np.asarray(scenario.goal).shape != (2,) or not _goal_near_route(scenario):
        _fail(f"goal {scenario.goal} is not within one route width of the route", index, "goal_near_route")


def validate_scenarios(scenarios: List[Scenario]) -> None:
    """Validate a list, reporting the index of the first offending scenario."""
    for i, scenario in enumerate(scenarios):
        validate_scenario(scenario, index=i)
    logger.debug(f"Validated {len(scenarios)} scenarios")
