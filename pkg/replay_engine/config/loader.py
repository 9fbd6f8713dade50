"""Key-value config files: `section.field = value` lines parsed with python-dotenv."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from replay_engine.config.settings import ExperimentConfig
from replay_engine.exceptions import ConfigError

logger = logging.getLogger(__name__)


def _parse_value(raw: str) -> Union[str, List[str]]:
    """Comma-separated values become lists; pydantic coerces the elements."""
    if "," in raw:
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw.strip()


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, raw in flat.items():
        if raw is None:
            raise ConfigError(f"key '{key}' has no value")
        parts = key.strip().lower().split(".")
        if len(parts) < 2:
            raise ConfigError(f"key '{key}' must be qualified by a section, e.g. sim.dt")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key '{key}' conflicts with a scalar value")
            node = child
        if parts[-1] in node:
            raise ConfigError(f"duplicate key '{key}'")
        node[parts[-1]] = _parse_value(raw)
    return nested


def parse_config(flat: Dict[str, str]) -> ExperimentConfig:
    """Build an ExperimentConfig from dotted key-value pairs.

    Args:
        flat: Mapping such as {"train.rl.lr": "5.6e-5"}

    Returns:
        Validated config, defaults filled in for absent keys

    Raises:
        ConfigError: On unknown keys or values failing validation
    """
    try:
        return ExperimentConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: Union[str, Path, None]) -> ExperimentConfig:
    """Load an experiment config file; None yields all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    flat = dotenv_values(path, interpolate=False)
    config = parse_config(dict(flat))
    logger.info(f"Loaded config from {path} ({len(flat)} keys)")
    return config


def flatten_config(config: BaseModel, prefix: str = "") -> Dict[str, str]:
    """Inverse of parse_config: dotted keys with string values."""
    flat: Dict[str, str] = {}
    for name, value in config.model_dump(mode="json").items():
        _flatten_into(flat, f"{prefix}{name}", value)
    return flat


def _flatten_into(flat: Dict[str, str], key: str, value: Any) -> None:
    if isinstance(value, dict):
        for name, child in value.items():
            _flatten_into(flat, f"{key}.{name}", child)
    elif isinstance(value, list):
        flat[key] = ",".join(str(v) for v in value)
    else:
        flat[key] = str(value)


def write_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    """Write a config as a key-value file that load_config reads back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in flatten_config(config).items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
