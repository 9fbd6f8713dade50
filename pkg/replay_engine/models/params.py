"""Flat parameter storage with a deterministic name -> slice index."""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from replay_engine.config.settings import ActionTable, ModelConfig
from replay_engine.exceptions import ConfigError
from replay_engine.sim.observations import ACTIVE_AGENT_DIM, AGENT_DIM, ROAD_DIM, ROUTE_DIM, VALUE_DIM

logger = logging.getLogger(__name__)

MODALITY_DIMS = {
    "road_network": ROAD_DIM,
    "route": ROUTE_DIM,
    "active_agent": ACTIVE_AGENT_DIM,
}


@dataclass(frozen=True)
class ParamEntry:
    name: str
    shape: Tuple[int, ...]
    offset: int
    fan_in: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


class ParamIndex:
    """Ordered parameter layout; entries never overlap and tile [0, size)."""

    def __init__(self, entries: List[ParamEntry]):
        self.entries = entries
        self._by_name = {e.name: e for e in entries}
        self.size = entries[-1].offset + entries[-1].size if entries else 0

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> ParamEntry:
        return self._by_name[name]

    def __iter__(self) -> Iterator[ParamEntry]:
        return iter(self.entries)

    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def to_json(self) -> List[dict]:
        return [{"name": e.name, "shape": list(e.shape), "offset": e.offset} for e in self.entries]


class _IndexBuilder:
    def __init__(self):
        self.entries: List[ParamEntry] = []
        self.offset = 0

    def add(self, name: str, shape: Tuple[int, ...], fan_in: int) -> None:
        self.entries.append(ParamEntry(name, tuple(int(s) for s in shape), self.offset, fan_in))
        self.offset += int(np.prod(shape))

    def dense(self, prefix: str, n_in: int, n_out: int) -> None:
        self.add(f"{prefix}.w", (n_in, n_out), n_in)
        self.add(f"{prefix}.b", (n_out,), n_in)

    def norm(self, prefix: str, width: int) -> None:
        self.add(f"{prefix}.g", (width,), 0)
        self.add(f"{prefix}.b", (width,), 0)

    def attention_block(self, prefix: str, width: int, cross: bool) -> None:
        if cross:
            self.norm(f"{prefix}.ln_q", width)
            self.norm(f"{prefix}.ln_kv", width)
        else:
            self.norm(f"{prefix}.ln", width)
        for proj in ("q", "k", "v", "o"):
            self.dense(f"{prefix}.{proj}", width, width)
        self.norm(f"{prefix}.ff_ln", width)
        self.dense(f"{prefix}.ff1", width, width)
        self.dense(f"{prefix}.ff2", width, width)

    def residual_stack(self, prefix: str, width: int, depth: int) -> None:
        for i in range(depth):
            self.dense(f"{prefix}.block{i}.fc1", width, width)
            self.dense(f"{prefix}.block{i}.fc2", width, width)


def build_index(config: ModelConfig, actions: ActionTable) -> ParamIndex:
    """Parameter layout implied by the model config and the action table."""
    if config.trunk_depth < 1:
        raise ConfigError(f"trunk_depth must be >= 1, got {config.trunk_depth}")
    if config.latent_dim % config.num_heads:
        raise ConfigError(f"latent_dim {config.latent_dim} is not divisible by num_heads {config.num_heads}")
    d = config.latent_dim
    b = _IndexBuilder()
    b.dense("embed.agents", AGENT_DIM, d)
    b.add("null.agents", (d,), d)
    for modality in config.modality_order:
        b.dense(f"embed.{modality}", MODALITY_DIMS[modality], d)
        b.add(f"null.{modality}", (d,), d)
    b.attention_block("self_attn", d, cross=False)
    for modality in config.modality_order:
        b.attention_block(f"cross.{modality}", d, cross=True)
    b.residual_stack("policy", d, config.trunk_depth)
    b.dense("policy.accel", d, actions.num_accel)
    b.dense("policy.steer", d, actions.num_steer)
    dv = config.value_embed_dim
    b.dense("value.embed", VALUE_DIM, dv)
    b.residual_stack("value", d + dv, config.trunk_depth)
    b.dense("value.out", d + dv, 1)
    return ParamIndex(b.entries)


class ModelParams:
    """A flat vector plus its index; views returned by [] alias the vector."""

    def __init__(self, index: ParamIndex, flat: np.ndarray):
        if flat.ndim != 1 or flat.size != index.size:
            raise ValueError(f"flat parameters need shape ({index.size},), got {flat.shape}")
        self.index = index
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        entry = self.index[name]
        return self.flat[entry.offset:entry.offset + entry.size].reshape(entry.shape)

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self[name][...] = value

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        """Views of every parameter under prefix, keyed by the remaining name."""
        cut = len(prefix) + 1
        return {e.name[cut:]: self[e.name] for e in self.index if e.name.startswith(prefix + ".")}

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def num_params(self) -> int:
        return self.index.size

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.index, np.zeros_like(self.flat))

    def copy(self) -> "ModelParams":
        return ModelParams(self.index, self.flat.copy())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.index, self.flat.astype(dtype))

    def accumulate(self, prefix: str, grads: Dict[str, np.ndarray]) -> None:
        """Add local-name gradients into the views under prefix."""
        for name, g in grads.items():
            full = f"{prefix}.{name}" if prefix else name
            view = self[full]
            view += g.reshape(view.shape)


def init_params(
    config: ModelConfig,
    actions: Optional[ActionTable] = None,
    seed: int = 0,
    dtype=np.float64,
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; unit layer-norm gains.

    Raises:
        ConfigError: On an inconsistent model config
    """
    index = build_index(config, actions or ActionTable())
    rng = np.random.default_rng(seed)
    flat = np.empty(index.size, dtype=np.float64)
    for entry in index:
        chunk = flat[entry.offset:entry.offset + entry.size]
        if entry.name.endswith(".g") and entry.fan_in == 0:
            chunk[:] = 1.0
        elif entry.fan_in == 0:
            chunk[:] = 0.0
        else:
            bound = 1.0 / np.sqrt(entry.fan_in)
            chunk[:] = rng.uniform(-bound, bound, size=entry.size)
    logger.debug(f"Initialized {index.size} parameters (seed={seed})")
    return ModelParams(index, flat.astype(dtype))
