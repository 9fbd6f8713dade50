"""Synthetic scenario generation: straight roads, curves and right-turn junctions.

Each scenario carries a route of one or more lanes, an expert ego log that
follows the ego lane center at or below the speed limit, constant-speed
traffic on neighbouring lanes and optionally a stop line or a signalized
junction entry. Generated scenarios are replayed through the done checks and
redrawn when the logged ego would trigger any of them.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from replay_engine.config.settings import GeneratorConfig, SimConfig
from replay_engine.data.scenario import (
    Directionality,
    FeatureKind,
    LightState,
    LoggedAgent,
    RoadFeature,
    Route,
    RouteLane,
    Scenario,
    StopLine,
    TrafficLight,
    validate_scenario,
)
from replay_engine.exceptions import GeneratorError, ScenarioValidationError
from replay_engine.sim.geometry import wrap_angle

logger = logging.getLogger(__name__)

LATERAL_COMFORT = 2.0  # m/s^2, sets curve speeds and the approach profile
MAX_ACCEL = 2.0
MAX_BRAKE = 4.0
BRAKE_PROFILE = 3.0
BRAKE_DECISION = 3.5  # beyond this a yellow light is passed instead of stopped for
STOP_MARGIN = 1.0  # front bumper stops this far before a stop point
STOP_WAIT = 1.0
START_S = 5.0
GOAL_BACKOFF = 5.0
ROUTE_SLACK = 30.0
MIN_ROUTE_LENGTH = 120.0
MIN_CONTROL_S = 60.0
PATH_EXTENSION = 2000.0
POINT_SPACING = 1.0
SLOT_MARGIN = 20.0


class Topology(str, Enum):
    """Road layouts the generator can draw."""
    STRAIGHT = "straight"
    CURVE = "curve"
    JUNCTION = "junction"


class _Path:
    """Reference path of straight and constant-curvature pieces.

    Positions before the start and past the end continue straight.
    """

    def __init__(self, origin: Tuple[float, float, float], pieces: Sequence[Tuple[float, float]]):
        pieces = [(0.0, 0.0)] + list(pieces) + [(PATH_EXTENSION, 0.0)]
        self.lengths = np.array([p[0] for p in pieces], dtype=np.float64)
        self.curvatures = np.array([p[1] for p in pieces], dtype=np.float64)
        self.s_start = np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])
        starts = [origin]
        for length, k in zip(self.lengths[:-1], self.curvatures[:-1]):
            x, y, h = starts[-1]
            nx, ny, nh = self._advance(np.float64(x), np.float64(y), np.float64(h), np.float64(length), k)
            starts.append((float(nx), float(ny), float(nh)))
        self.starts = np.array(starts)

    @staticmethod
    def _advance(x, y, h, ds, k):
        safe_k = np.where(k == 0, 1.0, k)
        h1 = h + k * ds
        x_arc = x + (np.sin(h1) - np.sin(h)) / safe_k
        y_arc = y - (np.cos(h1) - np.cos(h)) / safe_k
        straight = k == 0
        return (
            np.where(straight, x + ds * np.cos(h), x_arc),
            np.where(straight, y + ds * np.sin(h), y_arc),
            h1,
        )

    def pose(self, s) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(x, y, heading, curvature) at path positions s."""
        s = np.asarray(s, dtype=np.float64)
        idx = np.clip(np.searchsorted(self.s_start, s, side="right") - 1, 0, len(self.lengths) - 1)
        k = self.curvatures[idx]
        x, y, h = self._advance(self.starts[idx, 0], self.starts[idx, 1], self.starts[idx, 2], s - self.s_start[idx], k)
        return x, y, h, k

    def offset_points(self, s, offset: float) -> np.ndarray:
        """(..., 2) points at lateral offset (positive to the left) from the path."""
        x, y, h, _ = self.pose(s)
        return np.stack([x - offset * np.sin(h), y + offset * np.cos(h)], axis=-1)

    def polyline(self, s0: float, s1: float, offset: float) -> np.ndarray:
        n = max(2, int(np.ceil((s1 - s0) / POINT_SPACING)) + 1)
        return self.offset_points(np.linspace(s0, s1, n), offset)


@dataclass
class _AgentLane:
    name: str
    path: _Path
    offset: float
    direction: int
    span: Tuple[float, float]


@dataclass
class _Layout:
    topology: Topology
    ref: _Path
    length: float
    lanes: List[Tuple[int, float, float, float]]  # (lane id, s0, s1, offset) along ref
    agent_lanes: List[_AgentLane]
    features: List[RoadFeature]
    junction_s: Optional[float] = None


def _f32(value: float) -> float:
    return float(np.float32(value))


def _feature(points: np.ndarray, kind: FeatureKind, direction: Directionality) -> RoadFeature:
    return RoadFeature(points.astype(np.float32), kind, direction)


def _straight_layout(rng: np.random.Generator, origin, length: float, config: GeneratorConfig, topology: Topology) -> _Layout:
    w = config.lane_width
    if topology is Topology.CURVE:
        radius = rng.uniform(config.curve_radius_min, config.curve_radius_max)
        lead_in = rng.uniform(0.2, 0.4) * length
        angle = min(rng.uniform(np.pi / 6, np.pi / 2), (length - lead_in - 20.0) / radius)
        sign = rng.choice([-1.0, 1.0])
        pieces = [(lead_in, 0.0), (radius * angle, sign / radius), (length - lead_in - radius * angle, 0.0)]
    else:
        pieces = [(length, 0.0)]
    ref = _Path(origin, pieces)
    span = (-SLOT_MARGIN, length + SLOT_MARGIN)
    features = [
        _feature(ref.polyline(0.0, length, -w / 2), FeatureKind.ROAD_EDGE, Directionality.NONE),
        _feature(ref.polyline(0.0, length, w / 2), FeatureKind.LANE_MARKING, Directionality.FORWARD),
        _feature(ref.polyline(0.0, length, 1.5 * w), FeatureKind.LANE_MARKING, Directionality.BOTH),
        _feature(ref.polyline(0.0, length, 2.5 * w), FeatureKind.ROAD_EDGE, Directionality.NONE),
    ]
    return _Layout(
        topology=topology,
        ref=ref,
        length=length,
        lanes=[(0, 0.0, length, 0.0), (1, 0.0, length, w)],
        agent_lanes=[
            _AgentLane("adjacent", ref, w, 1, span),
            _AgentLane("oncoming", ref, 2 * w, -1, span),
        ],
        features=features,
    )


def _junction_layout(rng: np.random.Generator, origin, length: float, config: GeneratorConfig) -> _Layout:
    w = config.lane_width
    radius = config.junction_radius
    arc = radius * np.pi / 2
    approach = float(np.clip(rng.uniform(0.3, 0.5) * length, MIN_CONTROL_S, length - arc - 20.0))
    exit_s = approach + arc
    ref = _Path(origin, [(approach, 0.0), (arc, -1.0 / radius), (length - exit_s, 0.0)])

    # The through road keeps going straight past the junction
    x0, y0, h0 = origin
    through_len = approach + radius + 2.5 * w + 40.0
    through = _Path((x0, y0, h0), [(through_len, 0.0)])
    span = (-SLOT_MARGIN, through_len)
    features = [
        _feature(ref.polyline(0.0, length, -w / 2), FeatureKind.ROAD_EDGE, Directionality.NONE),
        _feature(ref.polyline(0.0, approach, w / 2), FeatureKind.LANE_MARKING, Directionality.FORWARD),
        _feature(ref.polyline(exit_s, length, w / 2), FeatureKind.LANE_MARKING, Directionality.FORWARD),
        _feature(ref.polyline(exit_s, length, 1.5 * w), FeatureKind.ROAD_EDGE, Directionality.NONE),
        _feature(through.polyline(0.0, through_len, 1.5 * w), FeatureKind.LANE_MARKING, Directionality.BOTH),
        _feature(through.polyline(0.0, through_len, 2.5 * w), FeatureKind.ROAD_EDGE, Directionality.NONE),
    ]
    return _Layout(
        topology=Topology.JUNCTION,
        ref=ref,
        length=length,
        lanes=[
            (0, 0.0, approach, 0.0),
            (1, approach, exit_s, 0.0),
            (2, exit_s, length, 0.0),
            (3, 0.0, approach, w),
            (4, exit_s, length, w),
        ],
        agent_lanes=[
            _AgentLane("adjacent", through, w, 1, span),
            _AgentLane("oncoming", through, 2 * w, -1, span),
        ],
        features=features,
        junction_s=approach,
    )


def _route(layout: _Layout, lane_width: float) -> Route:
    lanes = []
    for lane_id, s0, s1, offset in layout.lanes:
        lanes.append(RouteLane(
            lane_id=lane_id,
            left_border=layout.ref.polyline(s0, s1, offset + lane_width / 2).astype(np.float32),
            right_border=layout.ref.polyline(s0, s1, offset - lane_width / 2).astype(np.float32),
            valid_interval=(_f32(s0), _f32(s1)),
        ))
    return Route(lanes)


def _agent_track(path: _Path, offset: float, direction: int, start: float, speed: float, times: np.ndarray) -> np.ndarray:
    """(n, 4) box-center poses of an agent moving at constant speed along a lane."""
    p = start + direction * speed * times
    xy = path.offset_points(p, offset)
    _, _, heading, _ = path.pose(p)
    if direction < 0:
        heading = heading + np.pi
    return np.column_stack([xy, wrap_angle(heading), np.full(len(times), speed)])


def _place_agents(
    rng: np.random.Generator,
    layout: _Layout,
    config: GeneratorConfig,
    speed_limit: float,
    times: np.ndarray,
) -> List[LoggedAgent]:
    agents: List[LoggedAgent] = []
    for lane in layout.agent_lanes:
        lo, hi = lane.span
        slots = int(np.floor((hi - lo) / config.min_slot_spacing))
        count = int(round(config.density * (hi - lo) / 100.0))
        if count > slots:
            raise GeneratorError(
                f"density {config.density} needs {count} agents on a {hi - lo:.0f} m lane "
                f"but min_slot_spacing={config.min_slot_spacing} leaves only {slots} slots"
            )
        if count == 0:
            continue
        # All agents of a lane share one speed, so initial spacing is kept forever
        speed = _f32(rng.uniform(0.5, 1.0) * speed_limit)
        chosen = np.sort(rng.choice(slots, size=count, replace=False))
        for j, slot in enumerate(chosen):
            start = lo + (slot + 0.5) * config.min_slot_spacing
            poses = _agent_track(lane.path, lane.offset, lane.direction, start, speed, times)
            agents.append(LoggedAgent(
                agent_id=f"{lane.name}-{j}",
                length=_f32(rng.uniform(4.0, 5.0)),
                width=_f32(rng.uniform(1.8, 2.0)),
                poses=poses.astype(np.float32),
                valid=np.ones(len(times), dtype=bool),
            ))
    return agents


def _light_states(rng: np.random.Generator, config: GeneratorConfig, times: np.ndarray) -> np.ndarray:
    """Green, yellow, red cycle with random phase lengths and offset."""
    green = rng.uniform(config.light_phase_min, config.light_phase_max)
    red = rng.uniform(config.light_phase_min, config.light_phase_max)
    cycle = green + config.yellow_seconds + red
    phase = np.mod(times + rng.uniform(0.0, cycle), cycle)
    states = np.full(len(times), int(LightState.RED), dtype=np.int8)
    states[phase < green + config.yellow_seconds] = int(LightState.YELLOW)
    states[phase < green] = int(LightState.GREEN)
    return states


def _curve_speed_cap(ref: _Path, length: float) -> Tuple[np.ndarray, np.ndarray]:
    """Speed cap along s from curvature, relaxed backwards so braking stays comfortable."""
    grid = np.arange(0.0, length + ROUTE_SLACK + 0.5, 0.5)
    _, _, _, k = ref.pose(grid)
    cap = np.where(k == 0, np.inf, np.sqrt(LATERAL_COMFORT / np.maximum(np.abs(k), 1e-12)))
    for i in range(len(grid) - 2, -1, -1):
        cap[i] = min(cap[i], np.sqrt(cap[i + 1] ** 2 + 2.0 * LATERAL_COMFORT * (grid[i + 1] - grid[i])))
    return grid, cap


def plan_ego_speed(
    ref: _Path,
    length: float,
    v_target: float,
    v0: float,
    num_steps: int,
    dt: float,
    overhang: float,
    stop_lines: Sequence[float] = (),
    lights: Sequence[Tuple[float, np.ndarray]] = (),
) -> Tuple[np.ndarray, np.ndarray]:
    """Expert speed profile along the reference path.

    The front bumper never passes a stop target: stop lines until the ego has
    stood still before them for a second, and lights that will be red (or
    yellow while stopping is still comfortable) one step after the next move.

    Returns:
        (s, v) per step
    """
    grid, cap = _curve_speed_cap(ref, length)
    s = np.zeros(num_steps)
    v = np.zeros(num_steps)
    s[0] = START_S
    v[0] = min(v0, float(np.interp(START_S, grid, cap)))
    released = [False] * len(stop_lines)
    waited = [0] * len(stop_lines)
    decisions: List[Optional[str]] = [None] * len(lights)
    wait_steps = int(round(STOP_WAIT / dt))

    for k in range(num_steps - 1):
        s[k + 1] = s[k] + v[k] * dt
        front = s[k + 1] + overhang
        v_des = min(v_target, float(np.interp(s[k + 1], grid, cap)))
        targets = []

        for j, stop_s in enumerate(stop_lines):
            if released[j] or stop_s <= front:
                continue
            if v[k] < 0.1 and stop_s - front <= 2.0:
                waited[j] += 1
                if waited[j] >= wait_steps:
                    released[j] = True
                    continue
            targets.append(stop_s - STOP_MARGIN - front)

        for j, (stop_s, states) in enumerate(lights):
            if stop_s <= front:
                continue
            state = int(states[min(k + 2, num_steps - 1)])
            d = stop_s - STOP_MARGIN - front
            if state not in (int(LightState.RED), int(LightState.YELLOW)):
                decisions[j] = None
                continue
            if decisions[j] is None:
                comfortable = v[k] ** 2 <= 2.0 * BRAKE_DECISION * max(d, 0.0)
                decisions[j] = "stop" if comfortable or v[k] == 0 else "go"
            if decisions[j] == "stop" or state == int(LightState.RED):
                targets.append(d)

        for d in targets:
            v_des = min(v_des, np.sqrt(2.0 * BRAKE_PROFILE * max(d, 0.0)))
        v_new = float(np.clip(v_des, v[k] - MAX_BRAKE * dt, v[k] + MAX_ACCEL * dt))
        for d in targets:
            v_new = min(v_new, max(d, 0.0) / dt)
        v[k + 1] = max(v_new, 0.0)
    return s, v


def generate_scenario(
    rng: np.random.Generator,
    config: GeneratorConfig,
    scenario_id: str,
    sim: Optional[SimConfig] = None,
) -> Scenario:
    """Draw one scenario.

    Raises:
        GeneratorError: If the traffic density cannot be placed
    """
    sim = sim or SimConfig()
    n = config.num_steps
    dt = config.dt
    times = np.arange(n) * dt

    weights = np.array([config.straight_weight, config.curve_weight, config.junction_weight])
    topology = list(Topology)[int(rng.choice(3, p=weights / weights.sum()))]
    speed_limit = _f32(rng.uniform(config.speed_limit_min, config.speed_limit_max))
    v_target = rng.uniform(0.7, 0.95) * speed_limit
    v0 = rng.uniform(0.5, 1.0) * v_target
    length = max(v_target * (n - 1) * dt + ROUTE_SLACK, MIN_ROUTE_LENGTH)
    origin = (rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0), rng.uniform(-np.pi, np.pi))

    if topology is Topology.JUNCTION:
        layout = _junction_layout(rng, origin, length, config)
    else:
        layout = _straight_layout(rng, origin, length, config, topology)
    ref = layout.ref
    w = config.lane_width

    stop_lines: List[StopLine] = []
    lights: List[TrafficLight] = []
    features = list(layout.features)
    if layout.junction_s is not None:
        control_s = layout.junction_s - 2.0
        with_light = rng.random() < config.traffic_light_prob
        with_stop = not with_light and rng.random() < config.stop_line_prob
    else:
        control_s = rng.uniform(MIN_CONTROL_S, max(MIN_CONTROL_S, length - 40.0))
        with_light = False
        with_stop = rng.random() < config.stop_line_prob
    if with_light or with_stop:
        across = np.stack([ref.offset_points(control_s, -w / 2), ref.offset_points(control_s, w / 2)])
        features.append(_feature(across, FeatureKind.STOP_LINE, Directionality.FORWARD))
        position = ref.offset_points(control_s, 0.0).astype(np.float32)
        if with_light:
            lights.append(TrafficLight(0, position, _light_states(rng, config, times)))
        else:
            stop_lines.append(StopLine(across.astype(np.float32), position))
            crosswalk = np.stack([ref.offset_points(control_s + 3.0, -w / 2), ref.offset_points(control_s + 3.0, 2.5 * w)])
            features.append(_feature(crosswalk, FeatureKind.CROSSWALK, Directionality.NONE))

    s, v = plan_ego_speed(
        ref, length, v_target, v0, n, dt, sim.front_overhang,
        stop_lines=[control_s] if stop_lines else [],
        lights=[(control_s, lights[0].states)] if lights else [],
    )
    x, y, heading, _ = ref.pose(s)
    ego_log = np.column_stack([x, y, wrap_angle(heading), v]).astype(np.float32)

    agents: List[LoggedAgent] = []
    if config.density > 0:
        agents = _place_agents(rng, layout, config, speed_limit, times)
        if rng.random() < config.lead_vehicle_prob:
            gap = config.lead_min_gap + rng.uniform(0.0, 15.0)
            poses = _agent_track(ref, 0.0, 1, START_S + sim.ego_center_offset + gap, _f32(v_target), times)
            agents.append(LoggedAgent(
                agent_id="lead",
                length=_f32(rng.uniform(4.0, 5.0)),
                width=_f32(rng.uniform(1.8, 2.0)),
                poses=poses.astype(np.float32),
                valid=np.ones(n, dtype=bool),
            ))

    return Scenario(
        scenario_id=scenario_id,
        num_steps=n,
        dt=dt,
        ego_log=ego_log,
        agents=agents,
        route=_route(layout, w),
        road_features=features,
        traffic_lights=lights,
        stop_lines=stop_lines,
        speed_limit=speed_limit,
        goal=ref.offset_points(length - GOAL_BACKOFF, 0.0).astype(np.float32),
    )


def _replay_failures(scenarios: Sequence[Scenario], config: GeneratorConfig, sim: SimConfig) -> List[int]:
    """Positions of scenarios whose logged ego triggers a done signal on replay."""
    from replay_engine.data.scenario_loader import ScenarioBatch
    from replay_engine.sim.environment import ReplayEnvironment

    env = ReplayEnvironment(sim=sim)
    failed = []
    for start in range(0, len(scenarios), 32):
        chunk = scenarios[start:start + 32]
        batch = ScenarioBatch.from_scenarios(chunk, config.max_steps, sim)
        episode = env.rollout(batch, replay_log=True, dones_enabled=True)
        failed.extend(start + int(i) for i in np.flatnonzero(episode.final_reason != 0))
    return failed


def generate_synthetic(config: GeneratorConfig, seed: int, sim: Optional[SimConfig] = None) -> List[Scenario]:
    """Generate config.num_scenarios scenarios, deterministic in seed.

    Each scenario draws from its own stream keyed by (seed, index, attempt),
    so a redrawn scenario never shifts the others.

    Raises:
        GeneratorError: If the config is infeasible or a scenario keeps failing verification
    """
    sim = sim or SimConfig()
    if config.density * config.min_slot_spacing > 100.0:
        raise GeneratorError(
            f"density {config.density} agents per 100 m exceeds the "
            f"{100.0 / config.min_slot_spacing:.1f} allowed by min_slot_spacing={config.min_slot_spacing}"
        )

    def draw(index: int, attempt: int) -> Scenario:
        rng = np.random.default_rng([seed, index, attempt])
        return generate_scenario(rng, config, f"syn-{seed}-{index:05d}", sim)

    attempts = [0] * config.num_scenarios
    scenarios = [draw(i, 0) for i in range(config.num_scenarios)]
    pending = list(range(config.num_scenarios))
    while pending:
        bad = []
        for i in pending:
            try:
                validate_scenario(scenarios[i], i)
            except ScenarioValidationError as exc:
                logger.debug(f"Redrawing scenario {i}: {exc}")
                bad.append(i)
        if config.verify:
            candidates = [i for i in pending if i not in bad]
            if candidates:
                failed = _replay_failures([scenarios[i] for i in candidates], config, sim)
                bad.extend(candidates[j] for j in failed)
        for i in bad:
            attempts[i] += 1
            if attempts[i] >= config.max_attempts:
                raise GeneratorError(f"scenario {i} failed verification {config.max_attempts} times")
            scenarios[i] = draw(i, attempts[i])
        pending = sorted(bad)

    redrawn = sum(1 for a in attempts if a > 0)
    logger.info(f"Generated {len(scenarios)} scenarios (seed={seed}, redrawn={redrawn})")
    return scenarios
