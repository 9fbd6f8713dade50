"""Tests for PPO/V-trace fine-tuning."""

import json
import threading
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from replay_engine.data.scenario_io import FORMAT_VERSION, HEADER, MAGIC, write_scenario_file
from replay_engine.exceptions import TrainingError, WorkerDisconnected
from replay_engine.models.checkpoint import load_checkpoint, save_checkpoint
from replay_engine.models.params import init_params
from replay_engine.training.rl import RL_CURVE_COLUMNS, RlTrainer, normalized_compute, run_rl
from tests.helpers import free_port, tiny_experiment

MAX_STEPS = 40


@pytest.fixture(scope="module")
def train_file(tmp_path_factory, generated_scenarios):
    path = tmp_path_factory.mktemp("rl") / "scenarios.bin"
    write_scenario_file(generated_scenarios, path)
    return path


def _config(**rl):
    settings = {
        "synchronous": True,
        "batch_size": 4,
        "replay_capacity": 64,
        "sequence_length": 8,
        "actor_batch_size": 4,
        "actors_per_learner": 1,
        "num_learners": 1,
        "total_agent_steps": 300,
        "eval_interval_steps": 150,
        "eval_scenarios": 4,
        "allreduce_timeout": 30.0,
    }
    settings.update(rl)
    return tiny_experiment(rl=settings)


class TestSynchronousRun:
    """Test the deterministic collect-then-update loop."""

    def test_outputs(self, train_file, tmp_path):
        """Test final, best and curve outputs of a short run."""
        result = run_rl(_config(), train_file, tmp_path, max_steps=MAX_STEPS)

        assert result.agent_steps >= 300
        assert result.learner_steps >= 1
        assert result.final_checkpoint == tmp_path / "rl.ckpt"
        assert (tmp_path / "checkpoints" / "best.ckpt").exists()
        assert not (tmp_path / "checkpoints" / "partial.ckpt").exists()

        curves = pd.read_csv(tmp_path / "curves.csv")
        assert list(curves.columns) == RL_CURVE_COLUMNS
        assert len(curves) >= 2
        assert curves["agent_steps"].iloc[0] == 0
        assert curves["mean_scenario_score"].between(0.0, 1.0).all()

        scaling = json.loads((tmp_path / "scaling.json").read_text())
        assert scaling["agent_steps"] == result.agent_steps
        assert scaling["num_learners"] == 1
        assert scaling["transport"] == "inprocess"
        assert scaling["num_workers"] == 2
        assert scaling["total_worker_s"] == pytest.approx(2 * scaling["wall_clock_s"])
        assert scaling["learner_worker_s"] == pytest.approx(scaling["wall_clock_s"])

        ckpt = load_checkpoint(result.final_checkpoint)
        assert ckpt.meta["phase"] == "rl"
        assert ckpt.meta["agent_steps"] == result.agent_steps
        assert ckpt.meta["policy_version"] == result.learner_steps
        assert ckpt.optimizer_state["t"] == result.learner_steps

    def test_reproducible(self, train_file, tmp_path):
        """Test two runs with the same seed end with identical parameters."""
        a = run_rl(_config(), train_file, tmp_path / "a", max_steps=MAX_STEPS)
        b = run_rl(_config(), train_file, tmp_path / "b", max_steps=MAX_STEPS)
        assert a.agent_steps == b.agent_steps
        np.testing.assert_array_equal(a.params.flat, b.params.flat)

    def test_learners_stay_in_sync(self, train_file, tmp_path):
        """Test every learner applies the same averaged update."""
        trainer = RlTrainer(_config(num_learners=2), train_file, tmp_path, max_steps=MAX_STEPS)
        result = trainer.run()
        assert result.learner_steps >= 1
        np.testing.assert_array_equal(trainer.learners[0].params.flat, trainer.learners[1].params.flat)
        assert trainer.store.latest().version == result.learner_steps

    def test_resume_finished_run(self, train_file, tmp_path):
        """Test resuming a run whose budget is spent restores its counters and stops."""
        first = run_rl(_config(), train_file, tmp_path / "first", max_steps=MAX_STEPS)
        resumed = run_rl(
            _config(), train_file, tmp_path / "resumed",
            init_checkpoint=load_checkpoint(first.final_checkpoint), max_steps=MAX_STEPS,
        )
        assert resumed.agent_steps == first.agent_steps
        assert resumed.learner_steps == 0
        np.testing.assert_array_equal(resumed.params.flat, first.params.flat)

    def test_starts_from_bc_checkpoint(self, train_file, tmp_path):
        """Test a BC checkpoint seeds the parameters but not the counters."""
        config = _config(total_agent_steps=1)
        params = init_params(config.model, config.actions, seed=9)
        path = save_checkpoint(tmp_path / "bc.ckpt", params, config.model, config.actions, "0" * 64,
                               meta={"phase": "bc", "epoch": 1, "step": 5})
        trainer = RlTrainer(config, train_file, tmp_path / "rl", init_checkpoint=load_checkpoint(path),
                            max_steps=MAX_STEPS)
        assert trainer.agent_steps == 0
        assert trainer.learners[0].optimizer.t == 0
        np.testing.assert_array_equal(trainer.learners[0].params.flat, params.flat.astype(np.float32))

    def test_worker_failure_flushes_partial(self, train_file, tmp_path):
        """Test a failing learner halts the run and leaves a partial checkpoint."""
        with patch.object(RlTrainer, "_gradient", side_effect=WorkerDisconnected("learner lost")):
            with pytest.raises(WorkerDisconnected):
                run_rl(_config(), train_file, tmp_path, max_steps=MAX_STEPS)
        assert (tmp_path / "checkpoints" / "partial.ckpt").exists()
        assert not (tmp_path / "rl.ckpt").exists()

    def test_empty_dataset(self, tmp_path):
        """Test an empty training file is refused."""
        path = tmp_path / "empty.bin"
        path.write_bytes(HEADER.pack(MAGIC, FORMAT_VERSION, 0, 0.1))
        with pytest.raises(TrainingError, match="empty"):
            RlTrainer(_config(), path, tmp_path / "out", max_steps=MAX_STEPS)


class TestAsynchronousRun:
    """Test the threaded actor/learner loop."""

    def test_two_learners(self, train_file, tmp_path):
        """Test concurrent actors and learners finish the budget with replicas in agreement."""
        config = _config(synchronous=False, num_learners=2, total_agent_steps=400, eval_interval_steps=10_000)
        trainer = RlTrainer(config, train_file, tmp_path, max_steps=MAX_STEPS)
        result = trainer.run()
        assert result.agent_steps >= 400
        assert (tmp_path / "rl.ckpt").exists()
        np.testing.assert_array_equal(trainer.learners[0].params.flat, trainer.learners[1].params.flat)
        # two learners with one actor each
        assert result.scaling["num_workers"] == 4
        assert result.scaling["total_worker_s"] == pytest.approx(4 * result.scaling["wall_clock_s"])


class TestSocketTransport:
    """Test learners in separate trainers averaging over TCP."""

    def _socket_config(self, rank, port, **rl):
        settings = {
            "synchronous": False,
            "transport": "socket",
            "num_learners": 2,
            "rank": rank,
            "address": f"127.0.0.1:{port}",
            "total_agent_steps": 400,
            "eval_interval_steps": 10_000,
        }
        settings.update(rl)
        return _config(**settings)

    def test_two_ranks(self, train_file, tmp_path):
        """Test two ranks start from rank 0's parameters and finish the shared budget in step."""
        port = free_port()
        bc_config = self._socket_config(1, port)
        bc_params = init_params(bc_config.model, bc_config.actions, seed=9)
        bc_path = save_checkpoint(tmp_path / "bc.ckpt", bc_params, bc_config.model, bc_config.actions, "0" * 64,
                                  meta={"phase": "bc", "epoch": 1, "step": 5})
        trainers = [
            RlTrainer(self._socket_config(0, port), train_file, tmp_path / "rank0", max_steps=MAX_STEPS),
            RlTrainer(bc_config, train_file, tmp_path / "rank1",
                      init_checkpoint=load_checkpoint(bc_path), max_steps=MAX_STEPS),
        ]
        results, errors = [None, None], [None, None]

        def target(rank):
            try:
                results[rank] = trainers[rank].run()
            except Exception as exc:
                errors[rank] = exc

        threads = [threading.Thread(target=target, args=(r,)) for r in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=120.0)

        assert errors == [None, None]
        first, second = results
        np.testing.assert_array_equal(first.params.flat, second.params.flat)
        assert first.learner_steps == second.learner_steps
        assert first.agent_steps >= 400
        assert second.agent_steps >= 400
        assert first.scaling["transport"] == "socket"
        assert not first.curves.empty
        assert second.curves.empty
        assert not (tmp_path / "rank1" / "curves.csv").exists()
        assert (tmp_path / "rank0" / "rl.ckpt").exists()
        assert (tmp_path / "rank1" / "rl.ckpt").exists()

    def test_missing_peer(self, train_file, tmp_path):
        """Test rank 0 gives up on an absent peer and flushes a partial checkpoint."""
        config = self._socket_config(0, free_port(), allreduce_timeout=0.5)
        trainer = RlTrainer(config, train_file, tmp_path, max_steps=MAX_STEPS)
        with pytest.raises(TrainingError):
            trainer.run()
        assert (tmp_path / "checkpoints" / "partial.ckpt").exists()
        assert not (tmp_path / "rl.ckpt").exists()


class TestNormalizedCompute:
    """Test worker-time normalization across runs."""

    def test_relative_to_first(self):
        """Test each run is divided by the first run's worker time."""
        reports = [{"total_worker_s": 10.0}, {"total_worker_s": 15.0}, {"total_worker_s": 40.0}]
        assert normalized_compute(reports) == [1.0, 1.5, 4.0]

    def test_empty(self):
        """Test no reports give no ratios."""
        assert normalized_compute([]) == []
