"""Checkpoint files: JSON header, f32 parameter block, optional optimizer moments.

Layout (little endian):
    magic "ZCKP" | version u16 | reserved u16 | header length u32 | header JSON
    | parameters f32[n] | adam m f32[n] | adam v f32[n]   (moments only when saved)
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from replay_engine.config.settings import ActionTable, ModelConfig
from replay_engine.exceptions import CheckpointError
from replay_engine.models.params import ModelParams, build_index

logger = logging.getLogger(__name__)

MAGIC = b"ZCKP"
FORMAT_VERSION = 1
PREAMBLE = struct.Struct("<4sHHI")
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Everything needed to resume training or run a policy."""

    params: ModelParams
    model_config: ModelConfig
    actions: ActionTable
    config_hash: str
    meta: Dict[str, Any] = field(default_factory=dict)
    optimizer_state: Optional[Dict[str, Any]] = None


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    model_config: ModelConfig,
    actions: ActionTable,
    config_hash: str,
    meta: Optional[Dict[str, Any]] = None,
    optimizer_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a checkpoint atomically (temp file, then rename).

    Args:
        path: Destination file
        params: Network parameters, stored as f32
        model_config: Model config the parameters belong to
        actions: Action table of the policy heads
        config_hash: Hash of the full experiment config
        meta: JSON-serializable run counters (epoch, step, policy_version, ...)
        optimizer_state: Optional {"t": int, "m": array, "v": array}
    """
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "model_config": model_config.model_dump(mode="json"),
        "action_table": actions.model_dump(mode="json"),
        "index": params.index.to_json(),
        "num_params": params.num_params,
        "meta": meta or {},
        "optimizer_t": None if optimizer_state is None else int(optimizer_state["t"]),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blocks = [params.flat]
    if optimizer_state is not None:
        blocks += [optimizer_state["m"], optimizer_state["v"]]

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(PREAMBLE.pack(MAGIC, FORMAT_VERSION, 0, len(header_bytes)))
        fh.write(header_bytes)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype=_F32).tobytes())
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} ({params.num_params} parameters)")
    return path


def load_checkpoint(
    path: Union[str, Path],
    expected_model: Optional[ModelConfig] = None,
    expected_hash: Optional[str] = None,
) -> Checkpoint:
    """Read a checkpoint and rebuild its parameter index from the stored config.

    Raises:
        CheckpointError: On a malformed file or a config mismatch
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < PREAMBLE.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, _, header_len = PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[PREAMBLE.size:PREAMBLE.size + header_len].decode("utf-8"))
        model_config = ModelConfig(**header["model_config"])
        actions = ActionTable(**header["action_table"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid checkpoint header: {exc}") from exc

    index = build_index(model_config, actions)
    if index.to_json() != header["index"]:
        raise CheckpointError(f"{path}: parameter index does not match the stored model config")
    if expected_model is not None and expected_model != model_config:
        raise CheckpointError(f"{path}: checkpoint model config differs from the requested one")
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise CheckpointError(f"{path}: config hash {header['config_hash'][:12]} != {expected_hash[:12]}")

    n = index.size
    offset = PREAMBLE.size + header_len
    has_moments = header.get("optimizer_t") is not None
    expected_len = offset + n * _F32.itemsize * (3 if has_moments else 1)
    if len(data) != expected_len:
        raise CheckpointError(f"{path}: expected {expected_len} bytes, found {len(data)}")

    def block(k: int) -> np.ndarray:
        start = offset + k * n * _F32.itemsize
        return np.frombuffer(data, dtype=_F32, count=n, offset=start).astype(np.float32)

    optimizer_state = None
    if has_moments:
        optimizer_state = {"t": int(header["optimizer_t"]), "m": block(1), "v": block(2)}
    logger.info(f"Loaded checkpoint {path} ({n} parameters)")
    return Checkpoint(
        params=ModelParams(index, block(0)),
        model_config=model_config,
        actions=actions,
        config_hash=header["config_hash"],
        meta=header.get("meta", {}),
        optimizer_state=optimizer_state,
    )
