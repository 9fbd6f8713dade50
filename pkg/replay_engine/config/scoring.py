"""Scenario-score bounds and comfort weights."""

from enum import Enum
from typing import Dict

from pydantic import BaseModel, field_validator


class MetricName(str, Enum):
    """Per-scenario metrics entering the scenario score, in product order."""
    RELATIVE_PROGRESS = "relative_progress"
    COLLISION_FREE = "collision_free"
    OFF_ROUTE_FREE = "off_route_free"
    STOP_LINE_FREE = "stop_line_free"
    TRAFFIC_LIGHT_FREE = "traffic_light_free"
    MIXED_COMFORT = "mixed_comfort"


class ScoreBounds(BaseModel):
    """Lower bounds l of the interval [l, 1] each raw metric is mapped onto."""

    progress: float = 0.8
    collision: float = 0.05
    off_route: float = 0.5
    stop_line: float = 0.5
    traffic_light: float = 0.5
    comfort: float = 0.8

    @field_validator("*")
    @classmethod
    def _check_unit_interval(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError(f"lower bound must lie in [0, 1), got {value}")
        return value

    def by_metric(self) -> Dict[MetricName, float]:
        """Bounds keyed by metric, in scenario-score product order."""
        return {
            MetricName.RELATIVE_PROGRESS: self.progress,
            MetricName.COLLISION_FREE: self.collision,
            MetricName.OFF_ROUTE_FREE: self.off_route,
            MetricName.STOP_LINE_FREE: self.stop_line,
            MetricName.TRAFFIC_LIGHT_FREE: self.traffic_light,
            MetricName.MIXED_COMFORT: self.comfort,
        }

    def floor(self) -> float:
        """Smallest reachable scenario score (every raw metric at 0)."""
        result = 1.0
        for bound in self.by_metric().values():
            result *= bound
        return result


class ComfortWeights(BaseModel):
    """Weights of squared acceleration and jerk in the mixed-comfort score."""

    accel: float = 0.1
    jerk: float = 0.05

    @field_validator("accel", "jerk")
    @classmethod
    def _check_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"comfort weight must be >= 0, got {value}")
        return value
