"""Driving metrics, scenario score and dataset evaluation."""

from replay_engine.evaluation.evaluator import EvaluationResult, PolicyEvaluator
from replay_engine.evaluation.metrics import (
    EvalMode,
    MetricReport,
    aggregate,
    done_metrics,
    map_score,
    mixed_comfort,
    relative_progress,
    scenario_score,
)

__all__ = [
    "EvalMode",
    "EvaluationResult",
    "MetricReport",
    "PolicyEvaluator",
    "aggregate",
    "done_metrics",
    "map_score",
    "mixed_comfort",
    "relative_progress",
    "scenario_score",
]
