"""Dataset evaluation: roll a policy over scenarios and write metric artifacts."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from replay_engine.config.settings import ExperimentConfig
from replay_engine.data.scenario_loader import DEFAULT_MAX_STEPS, ScenarioBatch, batch_iterator
from replay_engine.evaluation.metrics import METRIC_COLUMNS, EvalMode, MetricReport, aggregate, episode_reports
from replay_engine.models.base_policy import BasePolicy, NetworkPolicy
from replay_engine.models.checkpoint import load_checkpoint
from replay_engine.sim.done_signals import get_done_summary, log_done_summary
from replay_engine.sim.environment import ReplayEnvironment

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.csv"
AGGREGATE_NAME = "aggregate.json"


@dataclass
class EvaluationResult:
    reports: List[MetricReport]
    aggregate: Dict[str, Any]
    mode: EvalMode

    def metrics_frame(self) -> pd.DataFrame:
        """Non-degenerate scenarios sorted by id, so column means equal the aggregate."""
        rows = [r.to_row() for r in self.reports if not r.degenerate]
        frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        return frame.sort_values("scenario_id", kind="mergesort").reset_index(drop=True)

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        """Write metrics.csv and aggregate.json; returns both paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / METRICS_NAME
        self.metrics_frame().to_csv(metrics_path, index=False, float_format="%.17g")
        aggregate_path = out_dir / AGGREGATE_NAME
        payload = {"mode": self.mode.value, **self.aggregate}
        aggregate_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Wrote {metrics_path} and {aggregate_path}")
        return [metrics_path, aggregate_path]


class PolicyEvaluator:
    """Runs policies over a scenario set and scores every episode."""

    def __init__(self, config: Optional[ExperimentConfig] = None, batch_size: int = 32, max_steps: int = DEFAULT_MAX_STEPS):
        """Initialize the evaluator.

        Args:
            config: Simulator, reward, action and scoring settings
            batch_size: Scenarios simulated together
            max_steps: Padded episode length T
        """
        self.config = config or ExperimentConfig()
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.env = ReplayEnvironment(self.config.sim, self.config.reward, self.config.actions)

    def evaluate_batches(
        self,
        batches: Sequence[ScenarioBatch],
        policy: Optional[BasePolicy],
        mode: Union[str, EvalMode] = EvalMode.DONES,
        seed: int = 0,
        replay_log: bool = False,
    ) -> EvaluationResult:
        """Score a policy (or the logged ego when replay_log is set) on staged batches."""
        mode = EvalMode(mode)
        if policy is None and not replay_log:
            raise ValueError("a policy is required unless replay_log is set")
        reports: List[MetricReport] = []
        final_reasons = []
        for batch in batches:
            episode = self.env.rollout(
                batch,
                policy_fn=policy,
                seed=seed,
                dones_enabled=mode == EvalMode.DONES,
                replay_log=replay_log,
                policy_version=0 if policy is None else policy.version,
            )
            final_reasons.extend(episode.final_reason.tolist())
            reports.extend(episode_reports(episode, batch, mode, self.config.bounds, self.config.comfort))
        reports.sort(key=lambda r: r.scenario_id)
        if mode == EvalMode.DONES:
            source = "replay" if replay_log else f"eval v{0 if policy is None else policy.version}"
            log_done_summary(get_done_summary(final_reasons), source=source)
        summary = aggregate(reports)
        logger.info(
            f"Evaluated {len(reports)} scenarios ({mode.value}): "
            f"score={summary.get('mean_scenario_score', float('nan')):.4f} "
            f"failure_rate={summary.get('failure_rate', float('nan')):.4f} "
            f"progress_ratio={summary.get('progress_ratio', float('nan')):.4f}"
        )
        return EvaluationResult(reports=reports, aggregate=summary, mode=mode)

    def evaluate(
        self,
        policy: Optional[BasePolicy],
        data_path: Union[str, Path],
        mode: Union[str, EvalMode] = EvalMode.DONES,
        seed: int = 0,
        replay_log: bool = False,
        indices: Optional[Sequence[int]] = None,
    ) -> EvaluationResult:
        """Load a scenario file batch by batch and evaluate on all of it (or indices)."""
        batches = batch_iterator(
            data_path, self.batch_size, self.max_steps,
            sim=self.config.sim, actions=self.config.actions, indices=indices,
        )
        return self.evaluate_batches(batches, policy, mode, seed, replay_log)

    def rank_checkpoints(
        self,
        checkpoints: Sequence[Union[str, Path]],
        data_path: Union[str, Path],
        mode: Union[str, EvalMode] = EvalMode.DONES,
    ) -> pd.DataFrame:
        """Greedy evaluation of each checkpoint, best mean scenario score first."""
        rows = []
        for path in checkpoints:
            policy = NetworkPolicy.from_checkpoint(load_checkpoint(path), greedy=True)
            result = self.evaluate(policy, data_path, mode)
            rows.append({
                "checkpoint": str(path),
                "mean_scenario_score": result.aggregate.get("mean_scenario_score", 0.0),
                "failure_rate": result.aggregate.get("failure_rate", 1.0),
            })
        ranking = pd.DataFrame(rows, columns=["checkpoint", "mean_scenario_score", "failure_rate"])
        return ranking.sort_values("mean_scenario_score", ascending=False, kind="mergesort").reset_index(drop=True)
