"""Hand-built scenarios and small configs shared by the tests."""

import socket
from typing import Optional, Sequence

import numpy as np

from replay_engine.config.settings import ExperimentConfig, GeneratorConfig, ModelConfig, SimConfig
from replay_engine.data.scenario import (
    Directionality,
    FeatureKind,
    LoggedAgent,
    RoadFeature,
    Route,
    RouteLane,
    Scenario,
    StopLine,
    TrafficLight,
)
from replay_engine.sim.observations import (
    ACTIVE_AGENT_DIM,
    AGENT_DIM,
    ROAD_DIM,
    ROUTE_DIM,
    VALUE_DIM,
    ObservationBatch,
    PolicyObservation,
    ValueObservation,
)

LANE_WIDTH = 3.5


class StraightRoad:
    """A straight single-lane road starting at origin along heading."""

    def __init__(self, length: float = 200.0, heading: float = 0.0, origin=(0.0, 0.0), lane_width: float = LANE_WIDTH):
        self.length = length
        self.heading = heading
        self.origin = np.asarray(origin, dtype=np.float64)
        self.lane_width = lane_width
        self.forward = np.array([np.cos(heading), np.sin(heading)])
        self.left = np.array([-np.sin(heading), np.cos(heading)])

    def point(self, s, d=0.0) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        return self.origin + s[..., None] * self.forward + d[..., None] * self.left

    def route(self, spacing: float = 10.0) -> Route:
        s = np.linspace(0.0, self.length, int(self.length / spacing) + 1)
        return Route([RouteLane(
            lane_id=0,
            left_border=self.point(s, self.lane_width / 2).astype(np.float32),
            right_border=self.point(s, -self.lane_width / 2).astype(np.float32),
            valid_interval=(0.0, self.length),
        )])

    def pose(self, s, speed) -> np.ndarray:
        """(n, 4) rows of (x, y, heading, v) along the centerline."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        xy = self.point(s)
        return np.column_stack([xy, np.full(len(s), self.heading), np.broadcast_to(speed, s.shape)])


def make_scenario(
    scenario_id: str = "straight",
    num_steps: int = 20,
    dt: float = 0.1,
    speed: float = 5.0,
    start_s: float = 10.0,
    road: Optional[StraightRoad] = None,
    agents: Sequence[LoggedAgent] = (),
    traffic_lights: Sequence[TrafficLight] = (),
    stop_lines: Sequence[StopLine] = (),
    features: Optional[Sequence[RoadFeature]] = None,
    speed_limit: float = 13.9,
) -> Scenario:
    """Ego driving the centerline of a straight road at constant speed."""
    road = road or StraightRoad()
    s = start_s + speed * dt * np.arange(num_steps)
    if features is None:
        ends = np.array([0.0, road.length])
        features = [
            RoadFeature(road.point(ends, road.lane_width / 2).astype(np.float32), FeatureKind.ROAD_EDGE, Directionality.NONE),
            RoadFeature(road.point(ends, -road.lane_width / 2).astype(np.float32), FeatureKind.ROAD_EDGE, Directionality.NONE),
        ]
    return Scenario(
        scenario_id=scenario_id,
        num_steps=num_steps,
        dt=dt,
        ego_log=road.pose(s, speed).astype(np.float32),
        agents=list(agents),
        route=road.route(),
        road_features=list(features),
        traffic_lights=list(traffic_lights),
        stop_lines=list(stop_lines),
        speed_limit=speed_limit,
        goal=road.point(road.length - 5.0).astype(np.float32),
    )


def parked_agent(road: StraightRoad, s: float, num_steps: int, agent_id: str = "parked", d: float = 0.0) -> LoggedAgent:
    """A 4.5 x 2 m vehicle standing still on the road."""
    poses = np.tile(road.pose(s, 0.0)[0], (num_steps, 1))
    poses[:, :2] = road.point(s, d)
    return LoggedAgent(agent_id, 4.5, 2.0, poses.astype(np.float32), np.ones(num_steps, dtype=bool))


def small_sim(**overrides) -> SimConfig:
    """Fewer observation slots than the defaults."""
    return SimConfig(**{"num_agents": 4, "num_road_points": 8, "num_route_points": 8, **overrides})


def tiny_model() -> ModelConfig:
    return ModelConfig(latent_dim=8, num_heads=2, trunk_depth=1, value_embed_dim=4)


def tiny_experiment(**train_overrides) -> ExperimentConfig:
    """Small model and observation slots; train overrides apply to train.rl / train.bc dicts."""
    base = ExperimentConfig()
    train = base.train.model_dump()
    for section, values in train_overrides.items():
        train[section].update(values)
    return ExperimentConfig(
        sim=small_sim(),
        model=tiny_model(),
        train=train,
        generator=GeneratorConfig(num_scenarios=4, segment_seconds=2.0, density=1.0),
    )


def random_observations(n: int, sim: SimConfig, rng: np.random.Generator, leading=()) -> ObservationBatch:
    """Random features with roughly half the slots valid; every row keeps one valid agent."""
    lead = tuple(leading) + (n,)

    def slots(count, dim):
        values = rng.normal(size=lead + (count, dim))
        valid = rng.random(lead + (count,)) < 0.5
        return values, valid

    agents, agents_valid = slots(sim.num_agents, AGENT_DIM)
    agents_valid[..., 0] = True
    road, road_valid = slots(sim.num_road_points, ROAD_DIM)
    route, route_valid = slots(sim.num_route_points, ROUTE_DIM)
    return ObservationBatch(
        PolicyObservation(
            active_agent=rng.normal(size=lead + (ACTIVE_AGENT_DIM,)),
            agents=agents,
            agents_valid=agents_valid,
            road=road,
            road_valid=road_valid,
            route=route,
            route_valid=route_valid,
        ),
        ValueObservation(rng.normal(size=lead + (VALUE_DIM,))),
    )


def gradient_mismatches(loss, params, grads, rng: np.random.Generator, per_entry: int = 1, step: float = 1e-6):
    """Compare sampled gradient coordinates with difference quotients of loss().

    A step may cross a ReLU or clip kink on one side, so a coordinate passes
    when any of the central, forward or backward quotients agrees.

    Returns:
        List of (entry name, offset in entry, analytic, central quotient) that disagree
    """
    base = loss()
    failures = []
    for entry in params.index:
        for i in rng.choice(entry.size, size=min(per_entry, entry.size), replace=False):
            k = entry.offset + int(i)
            orig = params.flat[k]
            params.flat[k] = orig + step
            up = loss()
            params.flat[k] = orig - step
            down = loss()
            params.flat[k] = orig
            quotients = ((up - down) / (2 * step), (up - base) / step, (base - down) / step)
            g = grads.flat[k]
            if min(abs(q - g) for q in quotients) > 1e-5 + 1e-4 * abs(g):
                failures.append((entry.name, int(i), g, quotients[0]))
    return failures


def free_port() -> int:
    """A localhost port nobody is listening on right now."""
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]
