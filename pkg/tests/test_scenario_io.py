"""Tests for the scenario data model and file codec."""

import struct

import numpy as np
import pytest

from replay_engine.data.scenario import LightState, StopLine, TrafficLight, validate_scenario
from replay_engine.data.scenario_io import (
    HEADER,
    MAGIC,
    ScenarioIndex,
    read_json_mirror,
    read_scenario_file,
    write_json_mirror,
    write_scenario_file,
)
from replay_engine.exceptions import ScenarioFormatError, ScenarioValidationError
from tests.helpers import StraightRoad, make_scenario, parked_agent


def _rich_scenario(scenario_id: str = "rich") -> object:
    road = StraightRoad()
    n = 20
    light = TrafficLight(
        signal_id=7,
        stop_point=road.point(80.0).astype(np.float32),
        states=np.array([LightState.GREEN] * 10 + [LightState.RED] * 10, dtype=np.int8),
    )
    line = StopLine(
        points=road.point(np.array([60.0, 60.0]), np.array([-1.75, 1.75])).astype(np.float32),
        position=road.point(60.0).astype(np.float32),
    )
    return make_scenario(
        scenario_id,
        num_steps=n,
        road=road,
        agents=[parked_agent(road, 40.0, n)],
        traffic_lights=[light],
        stop_lines=[line],
        speed_limit=12.5,
    )


class TestScenarioValidation:
    """Test scenario invariants."""

    def test_valid_scenario(self):
        """Test a well-formed scenario passes."""
        validate_scenario(_rich_scenario())

    def test_too_few_steps(self):
        """Test num_steps below 2 names its invariant."""
        scenario = make_scenario(num_steps=1)
        with pytest.raises(ScenarioValidationError) as err:
            validate_scenario(scenario, index=4)
        assert err.value.invariant == "num_steps>=2"
        assert err.value.index == 4

    def test_ego_log_length(self):
        """Test an ego log shorter than num_steps is rejected."""
        scenario = make_scenario(num_steps=10)
        scenario.num_steps = 12
        with pytest.raises(ScenarioValidationError) as err:
            validate_scenario(scenario)
        assert err.value.invariant == "ego_log_length"

    def test_crossing_borders(self):
        """Test lane borders that cross are rejected."""
        scenario = make_scenario()
        lane = scenario.route.lanes[0]
        lane.left_border, lane.right_border = lane.left_border.copy(), lane.right_border.copy()
        lane.left_border[-1], lane.right_border[-1] = lane.right_border[-1].copy(), lane.left_border[-1].copy()
        with pytest.raises(ScenarioValidationError) as err:
            validate_scenario(scenario)
        assert err.value.invariant == "borders_disjoint"

    def test_route_gap(self):
        """Test valid intervals must cover the route from s=0."""
        scenario = make_scenario()
        scenario.route.lanes[0].valid_interval = (5.0, 200.0)
        with pytest.raises(ScenarioValidationError) as err:
            validate_scenario(scenario)
        assert err.value.invariant == "route_coverage"

    def test_goal_far_from_route(self):
        """Test a goal away from every lane is rejected."""
        scenario = make_scenario()
        scenario.goal = np.array([50.0, 40.0], dtype=np.float32)
        with pytest.raises(ScenarioValidationError) as err:
            validate_scenario(scenario)
        assert err.value.invariant == "goal_near_route"


class TestBinaryFile:
    """Test the binary scenario container."""

    def test_write_then_read(self, tmp_path):
        """Test every field survives the binary file."""
        scenarios = [_rich_scenario("a"), make_scenario("b", speed_limit=12.5)]
        path = tmp_path / "s.bin"
        write_scenario_file(scenarios, path)
        assert read_scenario_file(path) == scenarios

    def test_header(self, tmp_path):
        """Test the file starts with the magic, version and dt."""
        path = tmp_path / "s.bin"
        write_scenario_file([make_scenario(dt=0.1)], path)
        magic, version, _, dt = HEADER.unpack(path.read_bytes()[:HEADER.size])
        assert magic == MAGIC
        assert version == 1
        assert dt == 0.1

    def test_random_access(self, tmp_path):
        """Test the index reads single records in any order."""
        scenarios = [make_scenario(f"s{i}", speed_limit=12.5) for i in range(5)]
        path = tmp_path / "s.bin"
        write_scenario_file(scenarios, path)
        index = ScenarioIndex(path)
        assert len(index) == 5
        assert index.read(3).scenario_id == "s3"
        assert [s.scenario_id for s in index.read_many([4, 0])] == ["s4", "s0"]

    def test_index_out_of_range(self, tmp_path):
        """Test reading past the end raises IndexError."""
        path = tmp_path / "s.bin"
        write_scenario_file([make_scenario()], path)
        with pytest.raises(IndexError):
            ScenarioIndex(path).read(1)

    def test_empty_list(self, tmp_path):
        """Test writing nothing is an error."""
        with pytest.raises(ValueError):
            write_scenario_file([], tmp_path / "s.bin")

    def test_mixed_dt(self, tmp_path):
        """Test a file holds a single dt."""
        with pytest.raises(ValueError):
            write_scenario_file([make_scenario(dt=0.1), make_scenario(dt=0.2)], tmp_path / "s.bin")

    def test_invalid_scenario_index_reported(self, tmp_path):
        """Test the offending scenario index is named."""
        bad = make_scenario(num_steps=1)
        with pytest.raises(ScenarioValidationError) as err:
            write_scenario_file([make_scenario(), bad], tmp_path / "s.bin")
        assert err.value.index == 1

    def test_bad_magic(self, tmp_path):
        """Test a foreign header is rejected."""
        path = tmp_path / "s.bin"
        path.write_bytes(HEADER.pack(b"NOPE", 1, 0, 0.1))
        with pytest.raises(ScenarioFormatError):
            ScenarioIndex(path)

    def test_truncated_record(self, tmp_path):
        """Test a record cut short is detected."""
        path = tmp_path / "s.bin"
        write_scenario_file([make_scenario()], path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ScenarioFormatError):
            ScenarioIndex(path)

    def test_record_length_prefix(self, tmp_path):
        """Test records are prefixed by their byte length."""
        path = tmp_path / "s.bin"
        write_scenario_file([make_scenario()], path)
        data = path.read_bytes()
        (length,) = struct.unpack("<I", data[HEADER.size:HEADER.size + 4])
        assert HEADER.size + 4 + length == len(data)


class TestJsonMirror:
    """Test the JSON-lines debugging mirror."""

    def test_mirror_matches_binary(self, tmp_path):
        """Test the mirror decodes to the same scenarios."""
        scenarios = [_rich_scenario()]
        write_json_mirror(scenarios, tmp_path / "s.jsonl")
        assert read_json_mirror(tmp_path / "s.jsonl") == scenarios

    def test_format_detected(self, tmp_path):
        """Test read_scenario_file accepts the mirror."""
        scenarios = [make_scenario(speed_limit=12.5)]
        write_json_mirror(scenarios, tmp_path / "s.jsonl")
        assert read_scenario_file(tmp_path / "s.jsonl") == scenarios

    def test_not_a_mirror(self, tmp_path):
        """Test an arbitrary JSON file is rejected."""
        path = tmp_path / "other.jsonl"
        path.write_text('{"format": "other"}\n')
        with pytest.raises(ScenarioFormatError):
            read_json_mirror(path)
