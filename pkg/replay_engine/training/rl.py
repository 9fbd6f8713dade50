"""PPO fine-tuning with V-trace: actors, per-learner replay tables and synchronized learners.

Layout per learner: actors_per_learner actor threads feed one replay
table; the learner samples sequences from it, computes its gradient and
joins the all-reduce. Rank 0 publishes each update as a new policy
snapshot. An evaluation thread scores the latest snapshot every
eval_interval_steps agent steps.

With the socket transport each process holds one learner and its actors;
the agent-step budget is shared, and only rank 0 evaluates.
"""

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from replay_engine.config.settings import ExperimentConfig, Transport, config_hash, parse_address
from replay_engine.data.scenario import Scenario
from replay_engine.data.scenario_loader import DEFAULT_MAX_STEPS, ScenarioBatch, load_scenarios
from replay_engine.evaluation.evaluator import PolicyEvaluator
from replay_engine.evaluation.metrics import EvalMode
from replay_engine.exceptions import TrainingError, WorkerDisconnected
from replay_engine.models.base_policy import NetworkPolicy
from replay_engine.models.checkpoint import Checkpoint, save_checkpoint
from replay_engine.models.params import ModelParams, init_params
from replay_engine.sim.environment import ReplayEnvironment
from replay_engine.training.allreduce import (
    InProcessAllReduce,
    SocketAllReduceClient,
    SocketAllReduceServer,
    allreduce_mean,
)
from replay_engine.training.losses import ppo_loss
from replay_engine.training.optimizer import Adam
from replay_engine.training.policy_store import PolicyStore
from replay_engine.training.replay import ReplayTable, SequenceBatch, split_episode

logger = logging.getLogger(__name__)

RL_CURVE_COLUMNS = [
    "agent_steps",
    "mean_scenario_score",
    "mean_relative_progress",
    "mean_collision_free",
    "mean_off_route_free",
    "mean_stop_line_free",
    "mean_traffic_light_free",
]
CURVES_NAME = "curves.csv"
SCALING_NAME = "scaling.json"
FINAL_NAME = "rl.ckpt"
BEST_NAME = "best.ckpt"
PARTIAL_NAME = "partial.ckpt"
EVAL_BATCH_SIZE = 32
LOG_EVERY = 10


@dataclass
class RlResult:
    params: ModelParams
    curves: pd.DataFrame
    agent_steps: int
    learner_steps: int
    final_checkpoint: Path
    best_checkpoint: Optional[Path] = None
    scaling: Dict[str, Any] = field(default_factory=dict)


class _Learner:
    """One learner replica: parameters, optimizer, replay table and sampling stream."""

    def __init__(self, rank: int, params: ModelParams, optimizer: Adam, capacity: int, seed: int):
        self.rank = rank
        self.params = params
        self.optimizer = optimizer
        self.table = ReplayTable(capacity, name=f"replay-{rank}")
        self.rng = np.random.default_rng([seed, 1, rank])
        self.compute_seconds = 0.0


class RlTrainer:
    """Runs the actor/learner training loop for one experiment."""

    def __init__(
        self,
        config: ExperimentConfig,
        train_path: Union[str, Path],
        out_dir: Union[str, Path],
        eval_path: Optional[Union[str, Path]] = None,
        init_checkpoint: Optional[Checkpoint] = None,
        max_steps: int = DEFAULT_MAX_STEPS,
    ):
        """Initialize the trainer.

        Args:
            config: Experiment config; train.rl holds the hyperparameters
            train_path: Scenario file the actors sample from
            out_dir: Directory for checkpoints/, curves.csv and scaling.json
            eval_path: Held-out scenarios for the evaluation actor; the first
                eval_scenarios training scenarios when omitted
            init_checkpoint: BC checkpoint to fine-tune, or an RL checkpoint
                to resume; training starts from scratch when omitted
            max_steps: Padded episode length T
        """
        self.config = config
        self.rl = config.train.rl
        self.out_dir = Path(out_dir)
        self.ckpt_dir = self.out_dir / "checkpoints"
        self.max_steps = max_steps
        self.digest = config_hash(config)
        self.env = ReplayEnvironment(config.sim, config.reward, config.actions)
        self.evaluator = PolicyEvaluator(config, batch_size=EVAL_BATCH_SIZE, max_steps=max_steps)

        self.scenarios: List[Scenario] = load_scenarios(train_path)
        if not self.scenarios:
            raise TrainingError(f"training dataset {train_path} is empty")
        eval_scenarios = load_scenarios(eval_path) if eval_path is not None else self.scenarios
        eval_scenarios = eval_scenarios[:self.rl.eval_scenarios]
        self.eval_batches = [
            ScenarioBatch.from_scenarios(eval_scenarios[i:i + EVAL_BATCH_SIZE], max_steps, config.sim, config.actions)
            for i in range(0, len(eval_scenarios), EVAL_BATCH_SIZE)
        ]

        params, optimizer_state, self.agent_steps = self._initial_state(init_checkpoint)
        self.socket = self.rl.transport == Transport.SOCKET
        ranks = [self.rl.rank] if self.socket else range(self.rl.num_learners)
        if self.socket and self.rl.rank != 0:
            # resumed progress is counted once, by rank 0
            self.agent_steps = 0
        self.learners = []
        for rank in ranks:
            optimizer = Adam(params.num_params, self.rl.lr, config.train.optimizer, dtype=np.float32)
            if optimizer_state is not None:
                optimizer.load_state_dict(optimizer_state)
            self.learners.append(_Learner(rank, params.copy(), optimizer, self.rl.replay_capacity, config.train.seed))
        self.store = PolicyStore(params)
        self.evaluates = self.learners[0].rank == 0
        self.learner_steps = 0
        self.curve_rows: List[Dict[str, float]] = []
        self.best_score = -np.inf
        self.best_checkpoint: Optional[Path] = None

        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._errors: List[BaseException] = []
        self._reducer: Optional[Union[InProcessAllReduce, SocketAllReduceClient]] = None
        self._server: Optional[SocketAllReduceServer] = None

    def _initial_state(self, checkpoint: Optional[Checkpoint]):
        if checkpoint is None:
            logger.info("RL from scratch")
            params = init_params(self.config.model, self.config.actions, seed=self.config.train.seed, dtype=np.float32)
            return params, None, 0
        params = checkpoint.params.astype(np.float32)
        if checkpoint.meta.get("phase") == "rl" and checkpoint.optimizer_state is not None:
            steps = int(checkpoint.meta.get("agent_steps", 0))
            logger.info(f"Resuming RL at {steps} agent steps")
            return params, checkpoint.optimizer_state, steps
        logger.info("RL fine-tuning from a BC checkpoint")
        return params, None, 0

    # Actors

    def _actor_batch(self, rng: np.random.Generator) -> ScenarioBatch:
        n = min(self.rl.actor_batch_size, len(self.scenarios))
        picks = rng.choice(len(self.scenarios), size=n, replace=False)
        return ScenarioBatch.from_scenarios(
            [self.scenarios[int(i)] for i in picks], self.max_steps, self.config.sim, self.config.actions
        )

    def _run_episode(self, rng: np.random.Generator, table: ReplayTable) -> int:
        """Roll out one batch with the snapshot current at episode start."""
        snapshot = self.store.latest()
        policy = NetworkPolicy(
            snapshot.params, self.config.model, self.config.actions, greedy=False, version=snapshot.version
        )
        batch = self._actor_batch(rng)
        seed = int(rng.integers(2**31))
        episode = self.env.rollout(batch, policy, seed=seed, policy_version=snapshot.version)
        table.push(split_episode(episode, self.rl.sequence_length))
        return episode.agent_steps

    def _local_steps(self) -> int:
        with self._lock:
            return self.agent_steps

    def _global_steps(self) -> int:
        """Agent steps of every learner process, as of the last reduction for the socket transport."""
        if isinstance(self._reducer, SocketAllReduceClient):
            return max(self._reducer.total_progress, self._local_steps())
        return self._local_steps()

    def _count_steps(self, steps: int) -> int:
        with self._lock:
            self.agent_steps += steps
            total = self.agent_steps
        if total >= self.rl.total_agent_steps:
            self._stop.set()
        return total

    def _actor_loop(self, learner: _Learner, actor: int) -> None:
        rng = np.random.default_rng([self.config.train.seed, 2, learner.rank, actor])
        while not self._stop.is_set():
            self._count_steps(self._run_episode(rng, learner.table))

    # Learners

    def _gradient(self, learner: _Learner, sequences) -> np.ndarray:
        start = time.perf_counter()
        batch = SequenceBatch.from_sequences(sequences)
        _, grads, stats = ppo_loss(
            learner.params, batch, self.config.model, self.rl, self.config.train.gamma
        )
        learner.compute_seconds += time.perf_counter() - start
        if learner is self.learners[0] and self.learner_steps % LOG_EVERY == 0:
            logger.info(
                f"Learner step {self.learner_steps}: loss={stats['loss']:.4f} "
                f"policy={stats['policy_loss']:.4f} value={stats['value_loss']:.4f} "
                f"entropy={stats['entropy']:.4f} clip_frac={stats['clip_fraction']:.3f}"
            )
        return grads.flat

    def _apply(self, learner: _Learner, mean: np.ndarray) -> None:
        learner.optimizer.step(learner.params, ModelParams(learner.params.index, mean))
        if learner is self.learners[0]:
            self.store.publish(learner.params)
            with self._lock:
                self.learner_steps += 1

    def _learner_loop(self, learner: _Learner) -> None:
        while True:
            sequences = learner.table.sample(self.rl.batch_size, learner.rng)
            if sequences:
                grad = self._gradient(learner, sequences)
            else:
                grad = np.zeros(learner.params.num_params, dtype=learner.params.dtype)
            mean, stop = self._reducer.allreduce(learner.rank, grad)
            if stop:
                self._stop.set()
                return
            self._apply(learner, mean)

    # Evaluation

    def _evaluate(self) -> None:
        snapshot = self.store.latest()
        steps = self._global_steps()
        policy = NetworkPolicy(snapshot.params, self.config.model, self.config.actions, greedy=True, version=snapshot.version)
        result = self.evaluator.evaluate_batches(self.eval_batches, policy, EvalMode.DONES, seed=self.config.train.seed)
        summary = result.aggregate
        row = {"agent_steps": steps}
        row.update({c: summary.get(c, 0.0) for c in RL_CURVE_COLUMNS[1:]})
        self.curve_rows.append(row)
        self._write_curves()
        score = row["mean_scenario_score"]
        if score > self.best_score:
            self.best_score = score
            self.best_checkpoint = save_checkpoint(
                self.ckpt_dir / BEST_NAME, snapshot.params, self.config.model, self.config.actions, self.digest,
                meta={"phase": "rl", "agent_steps": steps, "policy_version": snapshot.version, "score": score},
            )
        logger.info(f"Eval at {steps} agent steps (policy v{snapshot.version}): score={score:.4f}")

    def _eval_loop(self) -> None:
        next_eval = self.agent_steps + self.rl.eval_interval_steps
        while not self._stop.wait(0.2):
            steps = self._global_steps()
            if steps >= next_eval:
                self._evaluate()
                next_eval = steps + self.rl.eval_interval_steps

    def _write_curves(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.curve_rows, columns=RL_CURVE_COLUMNS).to_csv(self.out_dir / CURVES_NAME, index=False)

    # Orchestration

    def _guard(self, name: str, fn, *args) -> None:
        try:
            fn(*args)
        except BaseException as exc:
            logger.error(f"{name} failed: {exc!r}")
            with self._lock:
                self._errors.append(exc)
            self._halt()

    def _halt(self) -> None:
        self._stop.set()
        if self._reducer is not None:
            self._reducer.abort()
        for learner in self.learners:
            learner.table.close()

    def _connect(self) -> None:
        """Join the socket all-reduce; rank 0 hosts the server and its parameters win."""
        host, port = parse_address(self.rl.address)
        lead = self.learners[0]
        if lead.rank == 0:
            self._server = SocketAllReduceServer(self.rl.num_learners, host, port, self.rl.allreduce_timeout).start()
        client = SocketAllReduceClient(
            (host, port), lead.rank, self.rl.allreduce_timeout,
            progress=self._local_steps, budget=self.rl.total_agent_steps,
        )
        self._reducer = client
        params = client.connect(lead.params.flat)
        lead.params.flat[:] = params
        self.store = PolicyStore(lead.params, version=self.store.latest().version)
        logger.info(f"Rank {lead.rank} joined the all-reduce at {host}:{port} ({self.rl.num_learners} ranks)")

    def _disconnect(self) -> None:
        if isinstance(self._reducer, SocketAllReduceClient):
            self._reducer.close()
        if self._server is not None:
            if not self._errors and not self._server.wait(self.rl.allreduce_timeout):
                logger.warning("All-reduce server still waiting for ranks to close; stopping it")
            self._server.stop()

    def _run_async(self) -> None:
        if not self.socket:
            self._reducer = InProcessAllReduce(
                len(self.learners), self.rl.allreduce_timeout, should_stop=self._stop.is_set
            )
        threads = []
        for learner in self.learners:
            threads.append(threading.Thread(
                target=self._guard, args=(f"learner-{learner.rank}", self._learner_loop, learner),
                name=f"learner-{learner.rank}", daemon=True,
            ))
            for a in range(self.rl.actors_per_learner):
                threads.append(threading.Thread(
                    target=self._guard, args=(f"actor-{learner.rank}.{a}", self._actor_loop, learner, a),
                    name=f"actor-{learner.rank}.{a}", daemon=True,
                ))
        if self.evaluates:
            threads.append(threading.Thread(
                target=self._guard, args=("evaluator", self._eval_loop), name="evaluator", daemon=True
            ))
        for thread in threads:
            thread.start()
        self._stop.wait()
        # Learners may be blocked on empty tables once the actors have stopped
        for learner in self.learners:
            learner.table.close()
        for thread in threads:
            thread.join()

    def _run_sync(self) -> None:
        """Collect, then update, in a fixed order; bit-reproducible for fixed seeds."""
        actor_rngs = [
            [np.random.default_rng([self.config.train.seed, 2, lr.rank, a]) for a in range(self.rl.actors_per_learner)]
            for lr in self.learners
        ]
        next_eval = self.agent_steps + self.rl.eval_interval_steps
        while not self._stop.is_set():
            for learner, rngs in zip(self.learners, actor_rngs):
                for rng in rngs:
                    self._count_steps(self._run_episode(rng, learner.table))
            if self._stop.is_set():
                break
            if all(len(lr.table) >= self.rl.batch_size for lr in self.learners):
                grads = [self._gradient(lr, lr.table.sample(self.rl.batch_size, lr.rng)) for lr in self.learners]
                mean = allreduce_mean(grads)
                for learner in self.learners:
                    self._apply(learner, mean)
            if self.agent_steps >= next_eval:
                self._evaluate()
                next_eval = self.agent_steps + self.rl.eval_interval_steps

    def _checkpoint(self, path: Path) -> Path:
        lead = self.learners[0]
        return save_checkpoint(
            path, lead.params, self.config.model, self.config.actions, self.digest,
            meta={
                "phase": "rl",
                "agent_steps": self._global_steps(),
                "learner_steps": self.learner_steps,
                "policy_version": self.store.latest().version,
            },
            optimizer_state=lead.optimizer.state_dict(),
        )

    def run(self) -> RlResult:
        """Train until total_agent_steps agent steps have been simulated.

        Raises:
            TrainingError: When a worker fails (WorkerDisconnected or
                AllReduceTimeout); a partial checkpoint is flushed first
        """
        rl = self.rl
        mode = "synchronous" if rl.synchronous else "asynchronous"
        logger.info(
            f"RL ({mode}, {rl.transport.value}): {rl.num_learners} learner(s) x {rl.actors_per_learner} actor(s), "
            f"batch {rl.batch_size} sequences of {rl.sequence_length}, budget {rl.total_agent_steps} agent steps"
        )
        start = time.perf_counter()
        if self.socket:
            self._guard("all-reduce handshake", self._connect)
        if self.evaluates and not self._errors:
            self._evaluate()
        if self.agent_steps >= rl.total_agent_steps:
            self._stop.set()
        if not self._errors:
            if rl.synchronous:
                self._guard("synchronous loop", self._run_sync)
            else:
                self._run_async()
        self._disconnect()
        wall_clock = time.perf_counter() - start

        if self._errors:
            partial = self._checkpoint(self.ckpt_dir / PARTIAL_NAME)
            first = self._errors[0]
            logger.error(f"RL halted after {self.agent_steps} agent steps; partial checkpoint {partial}")
            if isinstance(first, TrainingError):
                raise first
            raise WorkerDisconnected(f"worker failed: {first!r}") from first

        if self.evaluates:
            self._evaluate()
        final = self._checkpoint(self.out_dir / FINAL_NAME)
        scaling = self._write_scaling(wall_clock)
        return RlResult(
            params=self.learners[0].params,
            curves=pd.DataFrame(self.curve_rows, columns=RL_CURVE_COLUMNS),
            agent_steps=self._global_steps(),
            learner_steps=self.learner_steps,
            final_checkpoint=final,
            best_checkpoint=self.best_checkpoint,
            scaling=scaling,
        )

    def _write_scaling(self, wall_clock: float) -> Dict[str, Any]:
        """Wall clock and worker time; normalized compute compares these across runs.

        Every learner and actor thread counts as a worker for the whole wall
        clock, with socket ranks assumed to run side by side.
        """
        rl = self.rl
        steps = self._global_steps()
        report = {
            "transport": rl.transport.value,
            "num_learners": rl.num_learners,
            "actors_per_learner": rl.actors_per_learner,
            "num_workers": rl.num_learners * (1 + rl.actors_per_learner),
            "wall_clock_s": wall_clock,
            "total_worker_s": wall_clock * rl.num_learners * (1 + rl.actors_per_learner),
            "learner_worker_s": wall_clock * rl.num_learners,
            "learner_compute_s": sum(lr.compute_seconds for lr in self.learners),
            "agent_steps": steps,
            "learner_steps": self.learner_steps,
            "agent_steps_per_s": steps / wall_clock if wall_clock > 0 else 0.0,
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / SCALING_NAME).write_text(json.dumps(report, indent=2), encoding="utf-8")
        return report


def run_rl(
    config: ExperimentConfig,
    train_path: Union[str, Path],
    out_dir: Union[str, Path],
    init_checkpoint: Optional[Checkpoint] = None,
    eval_path: Optional[Union[str, Path]] = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> RlResult:
    """Build an RlTrainer and run it."""
    return RlTrainer(config, train_path, out_dir, eval_path, init_checkpoint, max_steps).run()


def normalized_compute(reports: Sequence[Dict[str, Any]]) -> List[float]:
    """Total worker time of each run relative to the first (single-learner) run."""
    if not reports:
        return []
    base = reports[0]["total_worker_s"]
    return [r["total_worker_s"] / base if base > 0 else float("nan") for r in reports]
