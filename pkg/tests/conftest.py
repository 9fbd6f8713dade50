"""Shared fixtures for the Replay Engine tests."""

import pytest

from replay_engine.config.settings import GeneratorConfig
from replay_engine.data.generator import generate_synthetic
from replay_engine.data.scenario_io import write_scenario_file
from tests.helpers import make_scenario, small_sim


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end tests")


@pytest.fixture
def straight_scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def generated_scenarios():
    """Eight short synthetic scenarios, replay-verified."""
    config = GeneratorConfig(num_scenarios=8, segment_seconds=3.0, max_steps=40)
    return generate_synthetic(config, seed=11, sim=small_sim())


@pytest.fixture
def scenario_file(tmp_path, generated_scenarios):
    path = tmp_path / "scenarios.bin"
    write_scenario_file(generated_scenarios, path)
    return path
