"""Scenario file codec: versioned binary container plus a JSON-lines mirror.

Binary layout (little-endian):
    header  16 bytes: b"ZSIM", version u16, reserved u16, dt f64
    records u32 byte length, then the record body

A record body stores the Scenario fields in declaration order. Strings are a
u32 byte count plus UTF-8; every other value, scalars and list counts
included, is a u32 element count followed by that many f32 values.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

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
    validate_scenarios,
)
from replay_engine.exceptions import ScenarioFormatError

logger = logging.getLogger(__name__)

MAGIC = b"ZSIM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHd")
JSON_FORMAT = "ZSIM-JSON"

PathLike = Union[str, Path]


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def string(self, value: str) -> None:
        raw = value.encode("utf-8")
        self.buf += struct.pack("<I", len(raw))
        self.buf += raw

    def array(self, values) -> None:
        data = np.ascontiguousarray(np.asarray(values, dtype="<f4").ravel())
        self.buf += struct.pack("<I", data.size)
        self.buf += data.tobytes()

    def scalar(self, value: float) -> None:
        self.array([value])


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, size: int) -> memoryview:
        if self.pos + size > len(self.data):
            raise ScenarioFormatError(f"record truncated at byte {self.pos} (need {size} more)")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def _count(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def string(self) -> str:
        return bytes(self._take(self._count())).decode("utf-8")

    def array(self, columns: int = 0) -> np.ndarray:
        count = self._count()
        values = np.frombuffer(self._take(4 * count), dtype="<f4").astype(np.float32)
        if columns:
            if count % columns:
                raise ScenarioFormatError(f"array of {count} values is not a multiple of {columns} columns")
            values = values.reshape(-1, columns)
        return values

    def scalar(self) -> float:
        values = self.array()
        if values.size != 1:
            raise ScenarioFormatError(f"expected a scalar, found {values.size} values")
        return float(values[0])

    def count(self) -> int:
        return int(round(self.scalar()))


def encode_scenario(scenario: Scenario) -> bytes:
    """Serialize one scenario into a record body (without the length prefix)."""
    w = _Writer()
    w.string(scenario.scenario_id)
    w.scalar(scenario.num_steps)
    w.array(scenario.ego_log)

    w.scalar(len(scenario.agents))
    for agent in scenario.agents:
        w.string(agent.agent_id)
        w.scalar(agent.length)
        w.scalar(agent.width)
        w.array(agent.poses)
        w.array(np.asarray(agent.valid, dtype=np.float32))

    w.scalar(len(scenario.route.lanes))
    for lane in scenario.route.lanes:
        w.scalar(lane.lane_id)
        w.array(lane.left_border)
        w.array(lane.right_border)
        w.array(lane.valid_interval)

    w.scalar(len(scenario.road_features))
    for feature in scenario.road_features:
        w.array(feature.points)
        w.scalar(int(feature.kind))
        w.scalar(int(feature.directionality))

    w.scalar(len(scenario.traffic_lights))
    for light in scenario.traffic_lights:
        w.scalar(light.signal_id)
        w.array(light.stop_point)
        w.array(light.states)

    w.scalar(len(scenario.stop_lines))
    for line in scenario.stop_lines:
        w.array(line.points)
        w.array(line.position)

    w.scalar(scenario.speed_limit)
    w.array(scenario.goal)
    return bytes(w.buf)


def decode_scenario(body: bytes, dt: float) -> Scenario:
    """Inverse of encode_scenario; dt comes from the file header."""
    r = _Reader(body)
    scenario_id = r.string()
    num_steps = r.count()
    ego_log = r.array(4)

    agents = []
    for _ in range(r.count()):
        agent_id = r.string()
        length = r.scalar()
        width = r.scalar()
        poses = r.array(4)
        valid = r.array() > 0.5
        agents.append(LoggedAgent(agent_id, length, width, poses, valid))

    lanes = []
    for _ in range(r.count()):
        lane_id = r.count()
        left = r.array(2)
        right = r.array(2)
        interval = r.array()
        if interval.size != 2:
            raise ScenarioFormatError(f"lane {lane_id} valid interval has {interval.size} values")
        lanes.append(RouteLane(lane_id, left, right, (float(interval[0]), float(interval[1]))))

    features = []
    for _ in range(r.count()):
        points = r.array(2)
        kind = FeatureKind(r.count())
        directionality = Directionality(r.count())
        features.append(RoadFeature(points, kind, directionality))

    lights = []
    for _ in range(r.count()):
        signal_id = r.count()
        stop_point = r.array()
        states = np.rint(r.array()).astype(np.int8)
        lights.append(TrafficLight(signal_id, stop_point, states))

    stop_lines = []
    for _ in range(r.count()):
        points = r.array(2)
        position = r.array()
        stop_lines.append(StopLine(points, position))

    speed_limit = r.scalar()
    goal = r.array()
    if r.pos != len(r.data):
        raise ScenarioFormatError(f"{len(r.data) - r.pos} trailing bytes after scenario {scenario_id}")

    return Scenario(
        scenario_id=scenario_id,
        num_steps=num_steps,
        dt=dt,
        ego_log=ego_log,
        agents=agents,
        route=Route(lanes),
        road_features=features,
        traffic_lights=lights,
        stop_lines=stop_lines,
        speed_limit=speed_limit,
        goal=goal,
    )


def _common_dt(scenarios: Sequence[Scenario]) -> float:
    dts = {float(s.dt) for s in scenarios}
    if len(dts) != 1:
        raise ValueError(f"all scenarios in a file must share dt, found {sorted(dts)}")
    return dts.pop()


def write_scenario_file(scenarios: Sequence[Scenario], path: PathLike) -> None:
    """Write scenarios to the binary container after validating each one.

    Args:
        scenarios: Scenarios to write, all with the same dt
        path: Destination file

    Raises:
        ScenarioValidationError: Naming the index of the first invalid scenario
        ValueError: If the list is empty or mixes dt values
    """
    if not scenarios:
        raise ValueError("no scenarios to write")
    validate_scenarios(list(scenarios))
    dt = _common_dt(scenarios)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, 0, dt))
        for scenario in scenarios:
            body = encode_scenario(scenario)
            f.write(struct.pack("<I", len(body)))
            f.write(body)
    logger.info(f"Wrote {len(scenarios)} scenarios to {path}")


def _read_header(f) -> float:
    raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise ScenarioFormatError("file shorter than the 16-byte header")
    magic, version, _, dt = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ScenarioFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ScenarioFormatError(f"unsupported format version {version}")
    return dt


class ScenarioIndex:
    """Random access to the records of a binary scenario file."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._offsets: List[Tuple[int, int]] = []
        with open(self.path, "rb") as f:
            self.dt = _read_header(f)
            offset = HEADER.size
            while True:
                prefix = f.read(4)
                if not prefix:
                    break
                if len(prefix) < 4:
                    raise ScenarioFormatError(f"truncated length prefix at byte {offset}")
                (length,) = struct.unpack("<I", prefix)
                self._offsets.append((offset + 4, length))
                offset += 4 + length
                f.seek(offset)
            if offset > self.path.stat().st_size:
                raise ScenarioFormatError(f"last record runs {offset - self.path.stat().st_size} bytes past end of file")
        logger.debug(f"Indexed {len(self._offsets)} scenarios in {self.path}")

    def __len__(self) -> int:
        return len(self._offsets)

    def read(self, index: int) -> Scenario:
        """Decode the scenario at a record index.

        Raises:
            IndexError: If index is outside [0, len)
        """
        if not 0 <= index < len(self._offsets):
            raise IndexError(f"scenario index {index} out of range for {len(self)} scenarios")
        start, length = self._offsets[index]
        with open(self.path, "rb") as f:
            f.seek(start)
            body = f.read(length)
        if len(body) != length:
            raise ScenarioFormatError(f"record {index} truncated")
        return decode_scenario(body, self.dt)

    def read_many(self, indices: Iterable[int]) -> List[Scenario]:
        return [self.read(i) for i in indices]


def _to_jsonable(scenario: Scenario) -> dict:
    def arr(values) -> list:
        return np.asarray(values, dtype=np.float32).tolist()

    return {
        "scenario_id": scenario.scenario_id,
        "num_steps": int(scenario.num_steps),
        "ego_log": arr(scenario.ego_log),
        "agents": [
            {
                "agent_id": a.agent_id,
                "length": float(np.float32(a.length)),
                "width": float(np.float32(a.width)),
                "poses": arr(a.poses),
                "valid": np.asarray(a.valid, dtype=bool).tolist(),
            }
            for a in scenario.agents
        ],
        "route": {
            "lanes": [
                {
                    "lane_id": int(lane.lane_id),
                    "left_border": arr(lane.left_border),
                    "right_border": arr(lane.right_border),
                    "valid_interval": arr(lane.valid_interval),
                }
                for lane in scenario.route.lanes
            ]
        },
        "road_features": [
            {"points": arr(f.points), "kind": FeatureKind(f.kind).name.lower(),
             "directionality": Directionality(f.directionality).name.lower()}
            for f in scenario.road_features
        ],
        "traffic_lights": [
            {"signal_id": int(l.signal_id), "stop_point": arr(l.stop_point),
             "states": np.asarray(l.states, dtype=int).tolist()}
            for l in scenario.traffic_lights
        ],
        "stop_lines": [
            {"points": arr(s.points), "position": arr(s.position)} for s in scenario.stop_lines
        ],
        "speed_limit": float(np.float32(scenario.speed_limit)),
        "goal": arr(scenario.goal),
    }


def _from_jsonable(obj: dict, dt: float) -> Scenario:
    def arr(values, columns: int = 0) -> np.ndarray:
        out = np.asarray(values, dtype=np.float32)
        return out.reshape(-1, columns) if columns else out.ravel()

    try:
        return Scenario(
            scenario_id=obj["scenario_id"],
            num_steps=int(obj["num_steps"]),
            dt=dt,
            ego_log=arr(obj["ego_log"], 4),
            agents=[
                LoggedAgent(a["agent_id"], float(np.float32(a["length"])), float(np.float32(a["width"])),
                            arr(a["poses"], 4), np.asarray(a["valid"], dtype=bool))
                for a in obj["agents"]
            ],
            route=Route([
                RouteLane(int(lane["lane_id"]), arr(lane["left_border"], 2), arr(lane["right_border"], 2),
                          tuple(float(v) for v in arr(lane["valid_interval"])))
                for lane in obj["route"]["lanes"]
            ]),
            road_features=[
                RoadFeature(arr(f["points"], 2), FeatureKind[f["kind"].upper()],
                            Directionality[f["directionality"].upper()])
                for f in obj["road_features"]
            ],
            traffic_lights=[
                TrafficLight(int(l["signal_id"]), arr(l["stop_point"]), np.asarray(l["states"], dtype=np.int8))
                for l in obj["traffic_lights"]
            ],
            stop_lines=[StopLine(arr(s["points"], 2), arr(s["position"])) for s in obj["stop_lines"]],
            speed_limit=float(np.float32(obj["speed_limit"])),
            goal=arr(obj["goal"]),
        )
    except (KeyError, TypeError) as e:
        raise ScenarioFormatError(f"malformed JSON scenario: {e}") from e


def write_json_mirror(scenarios: Sequence[Scenario], path: PathLike) -> None:
    """Write the debugging mirror: a header line, then one scenario per line."""
    if not scenarios:
        raise ValueError("no scenarios to write")
    validate_scenarios(list(scenarios))
    dt = _common_dt(scenarios)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": JSON_FORMAT, "version": FORMAT_VERSION, "dt": dt}) + "\n")
        for scenario in scenarios:
            f.write(json.dumps(_to_jsonable(scenario), separators=(",", ":")) + "\n")
    logger.info(f"Wrote JSON mirror of {len(scenarios)} scenarios to {path}")


def read_json_mirror(path: PathLike) -> List[Scenario]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise ScenarioFormatError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != JSON_FORMAT or header.get("version") != FORMAT_VERSION:
        raise ScenarioFormatError(f"{path} is not a version-{FORMAT_VERSION} JSON mirror")
    dt = float(header["dt"])
    return [_from_jsonable(json.loads(line), dt) for line in lines[1:]]


def read_scenario_file(path: PathLike) -> List[Scenario]:
    """Read every scenario from a binary file or a JSON mirror (detected by magic)."""
    path = Path(path)
    with open(path, "rb") as f:
        is_binary = f.read(4) == MAGIC
    if not is_binary:
        return read_json_mirror(path)
    index = ScenarioIndex(path)
    return index.read_many(range(len(index)))
