"""Step-time benchmark across batch sizes."""

import logging
import time
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from replay_engine.config.settings import ActionTable, SimConfig
from replay_engine.data.scenario import Scenario
from replay_engine.data.scenario_loader import ScenarioBatch
from replay_engine.sim.environment import ReplayEnvironment

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["batch_size", "mean_step_ms", "amortized_us_per_scenario"]


def _time_steps(env: ReplayEnvironment, batch: ScenarioBatch, steps: int, warmup: int, zero: np.ndarray) -> float:
    """Seconds spent in env.step over `steps` steps, resetting whenever every row is finished."""
    state = env.reset(batch)
    for _ in range(warmup):
        if not state.live(batch).any():
            state = env.reset(batch)
        state = env.step(state, batch, zero, dones_enabled=False).state

    elapsed = 0.0
    state = env.reset(batch)
    for _ in range(steps):
        if not state.live(batch).any():
            state = env.reset(batch)
        start = time.perf_counter()
        state = env.step(state, batch, zero, dones_enabled=False).state
        elapsed += time.perf_counter() - start
    return elapsed


def bench_step(
    scenarios: Sequence[Scenario],
    batch_sizes: Sequence[int],
    steps: int = 1000,
    warmup: int = 20,
    repeats: int = 1,
    sim: Optional[SimConfig] = None,
    actions: Optional[ActionTable] = None,
    max_steps: int = 400,
) -> pd.DataFrame:
    """Time the batched step for each batch size.

    Batches are filled by cycling through the given scenarios. Done signals
    are disabled and the batch is reset when all rows reach the end of
    their logs, so every timed step does the full amount of work.

    Args:
        scenarios: Reference scenarios
        batch_sizes: Batch sizes to time, one output row each
        steps: Timed steps per batch size and repeat
        warmup: Untimed steps before timing
        repeats: Timing repeats; the mean is reported
        sim: Simulator settings
        actions: Action table
        max_steps: Padding length T

    Returns:
        DataFrame with columns batch_size, mean_step_ms, amortized_us_per_scenario
    """
    if not scenarios:
        raise ValueError("bench_step needs at least one scenario")
    actions = actions or ActionTable()
    env = ReplayEnvironment(sim=sim, actions=actions)

    rows: List[dict] = []
    for size in batch_sizes:
        if size < 1:
            raise ValueError(f"batch sizes must be >= 1, got {size}")
        picked = [scenarios[i % len(scenarios)] for i in range(size)]
        batch = ScenarioBatch.from_scenarios(picked, max_steps, env.sim, actions)
        zero = np.tile(np.array(actions.zero_index, dtype=np.int64), (size, 1))
        timings = [_time_steps(env, batch, steps, warmup, zero) for _ in range(repeats)]
        step_seconds = float(np.mean(timings)) / steps
        rows.append({
            "batch_size": int(size),
            "mean_step_ms": step_seconds * 1e3,
            "amortized_us_per_scenario": step_seconds * 1e6 / size,
        })
        logger.info(
            f"Batch {size}: {rows[-1]['mean_step_ms']:.3f} ms/step, "
            f"{rows[-1]['amortized_us_per_scenario']:.1f} us/scenario"
        )
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
