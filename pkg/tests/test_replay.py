"""Tests for transition sequences, the replay table and the policy store."""

import threading
import time

import numpy as np
import pytest

from replay_engine.config.settings import ActionTable
from replay_engine.data.scenario_loader import ScenarioBatch
from replay_engine.exceptions import TrainingError
from replay_engine.models.base_policy import NetworkPolicy
from replay_engine.models.params import init_params
from replay_engine.sim.environment import ReplayEnvironment
from replay_engine.training.policy_store import PolicyStore
from replay_engine.training.replay import ReplayTable, SequenceBatch, TransitionSequence, split_episode
from tests.helpers import StraightRoad, make_scenario, parked_agent, random_observations, small_sim, tiny_model

T = 20
L = 8


@pytest.fixture(scope="module")
def episode():
    """Two rows: a clean drive and one that runs into a parked car."""
    road = StraightRoad()
    scenarios = [
        make_scenario("clean", num_steps=T),
        make_scenario("crash", num_steps=T, agents=[parked_agent(road, 17.0, T)]),
    ]
    batch = ScenarioBatch.from_scenarios(scenarios, max_steps=T, sim=small_sim())
    model = tiny_model()
    policy = NetworkPolicy(init_params(model, ActionTable(), seed=3), model, ActionTable(), greedy=True, version=4)
    return ReplayEnvironment(sim=small_sim()).rollout(batch, policy, policy_version=4)


def _sequences(n: int, length: int = 4):
    """Minimal sequences tagged by start index."""
    rng = np.random.default_rng(0)
    return [
        TransitionSequence(
            scenario_id=f"s{i}",
            start=i,
            obs=random_observations(length + 1, small_sim(), rng),
            actions=np.zeros((length, 2), dtype=np.int64),
            behavior_log_probs=np.zeros(length),
            behavior_values=np.zeros(length),
            rewards=np.full(length, float(i)),
            dones=np.zeros(length, dtype=bool),
            mask=np.ones(length, dtype=bool),
            bootstrap_value=0.0,
            policy_version=0,
        )
        for i in range(n)
    ]


class TestSplitEpisode:
    """Test cutting episodes into fixed-length sequences."""

    def test_covers_live_steps(self, episode):
        """Test sequences tile each row's live prefix in order."""
        sequences = split_episode(episode, L)
        for b, scenario_id in enumerate(episode.scenario_ids):
            rows = [s for s in sequences if s.scenario_id == scenario_id]
            live = int(episode.mask[b].sum())
            assert len(rows) == -(-live // L)
            assert [s.start for s in rows] == list(range(0, len(rows) * L, L))
            rewards = np.concatenate([s.rewards[s.mask] for s in rows])
            np.testing.assert_allclose(rewards, episode.rewards[b][episode.mask[b]])

    def test_shapes_and_padding(self, episode):
        """Test every sequence carries L steps and L + 1 observations, zero-padded past the end."""
        for seq in split_episode(episode, L):
            assert seq.length == L
            assert seq.obs.policy.active_agent.shape[0] == L + 1
            assert seq.obs.value.features.shape[0] == L + 1
            assert seq.policy_version == 4
            assert seq.mask[0]
            tail = ~seq.mask
            assert np.all(seq.rewards[tail] == 0.0)

    def test_crash_row_terminates(self, episode):
        """Test the sequence holding the collision bootstraps from zero."""
        crash = [s for s in split_episode(episode, L) if s.scenario_id == "crash"]
        assert crash[-1].terminated
        assert crash[-1].bootstrap_value == 0.0
        assert not any(s.terminated for s in crash[:-1])

    def test_bootstrap_values(self, episode):
        """Test unterminated sequences bootstrap from the value at the next step or the episode end."""
        for seq in split_episode(episode, L):
            if seq.terminated:
                continue
            b = episode.scenario_ids.index(seq.scenario_id)
            end = seq.start + L
            expected = episode.values[b, end] if end < T else episode.bootstrap[b]
            assert seq.bootstrap_value == pytest.approx(expected)

    def test_last_sequence_sees_final_observation(self, episode):
        """Test the sequence reaching the rollout end carries the observation after it."""
        b = episode.scenario_ids.index("clean")
        last = [s for s in split_episode(episode, L) if s.scenario_id == "clean"][-1]
        assert last.start + L >= T
        np.testing.assert_array_equal(last.obs.value.features[T - last.start], episode.final_obs.value.features[b])
        np.testing.assert_array_equal(last.obs.policy.route[T - last.start], episode.final_obs.policy.route[b])

    def test_bad_length(self, episode):
        """Test a non-positive length is rejected."""
        with pytest.raises(ValueError):
            split_episode(episode, 0)


class TestSequenceBatch:
    """Test stacking sequences for the learner."""

    def test_stack(self, episode):
        """Test observations gain a leading sequence axis."""
        sequences = split_episode(episode, L)
        batch = SequenceBatch.from_sequences(sequences)
        assert batch.size == len(sequences)
        assert batch.length == L
        assert batch.obs.policy.agents.shape[:2] == (len(sequences), L + 1)
        assert batch.actions.shape == (len(sequences), L, 2)
        assert batch.mask.dtype == bool
        assert batch.obs.flatten(2).policy.active_agent.shape[0] == len(sequences) * (L + 1)

    def test_empty(self):
        """Test zero sequences cannot be batched."""
        with pytest.raises(ValueError):
            SequenceBatch.from_sequences([])

    def test_mixed_lengths(self):
        """Test sequences of different lengths cannot be batched."""
        with pytest.raises(ValueError, match="mixed lengths"):
            SequenceBatch.from_sequences(_sequences(1, 4) + _sequences(1, 5))


class TestReplayTable:
    """Test the bounded FIFO replay table."""

    def test_fifo_eviction(self):
        """Test the oldest sequences are dropped at capacity."""
        table = ReplayTable(3)
        assert table.push(_sequences(5)) == 5
        assert len(table) == 3
        assert table.total_pushed == 5
        starts = {s.start for s in table.sample(3, np.random.default_rng(0))}
        assert starts == {2, 3, 4}

    def test_sample_distinct(self):
        """Test one draw never repeats a sequence."""
        table = ReplayTable(10)
        table.push(_sequences(10))
        picks = table.sample(10, np.random.default_rng(1))
        assert len({s.start for s in picks}) == 10

    def test_sample_more_than_capacity(self):
        """Test a draw larger than the table can ever hold is rejected."""
        with pytest.raises(ValueError):
            ReplayTable(2).sample(3, np.random.default_rng(0))

    def test_timeout(self):
        """Test waiting for sequences that never arrive times out."""
        table = ReplayTable(4, name="learner0")
        table.push(_sequences(1))
        with pytest.raises(TrainingError, match="learner0"):
            table.sample(2, np.random.default_rng(0), timeout=0.05)

    def test_close_releases_waiter(self):
        """Test closing the table wakes a blocked sampler with nothing."""
        table = ReplayTable(4)
        result = {}

        def wait():
            result["picks"] = table.sample(2, np.random.default_rng(0), timeout=5.0)

        thread = threading.Thread(target=wait)
        thread.start()
        time.sleep(0.05)
        table.close()
        thread.join(timeout=5.0)
        assert result["picks"] == []

    def test_push_wakes_waiter(self):
        """Test a blocked sampler returns once enough sequences arrive."""
        table = ReplayTable(4)
        result = {}

        def wait():
            result["picks"] = table.sample(2, np.random.default_rng(0), timeout=5.0)

        thread = threading.Thread(target=wait)
        thread.start()
        time.sleep(0.05)
        table.push(_sequences(2))
        thread.join(timeout=5.0)
        assert len(result["picks"]) == 2

    def test_bad_capacity(self):
        """Test capacity must be positive."""
        with pytest.raises(ValueError):
            ReplayTable(0)


class TestPolicyStore:
    """Test versioned parameter snapshots."""

    def test_publish_increments_version(self):
        """Test each publish bumps the version."""
        store = PolicyStore(init_params(tiny_model()))
        assert store.latest().version == 0
        assert store.publish(init_params(tiny_model(), seed=1)) == 1
        assert store.publish(init_params(tiny_model(), seed=2)) == 2
        assert store.latest().version == 2

    def test_snapshot_isolated(self):
        """Test later learner updates do not leak into a published snapshot."""
        params = init_params(tiny_model())
        store = PolicyStore(params)
        store.publish(params)
        snapshot = store.latest()
        params.flat[:] = 0.0
        assert np.any(snapshot.params.flat != 0.0)
        assert not snapshot.params.flat.flags.writeable
