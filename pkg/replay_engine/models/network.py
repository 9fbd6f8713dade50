"""Perceiver-style encoder with factorized policy heads and a value head.

Agent tokens self-attend first; the resulting latent tokens then
cross-attend each remaining modality in the configured order. Every
modality gets a learned null token that is always valid, so a scene with
no valid entries for a modality reduces to attending the null token. The
pooled latent feeds a residual policy trunk with one output layer per
action head, and, concatenated with the embedded value-only features, a
residual value trunk.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from replay_engine.config.settings import ModelConfig
from replay_engine.models import layers
from replay_engine.models.params import MODALITY_DIMS, ModelParams
from replay_engine.sim.observations import AGENT_DIM, VALUE_DIM, ObservationBatch

logger = logging.getLogger(__name__)

# Fixed input scaling so features enter the embeddings at order one
AGENT_SCALE = np.array([1 / 50, 1 / 50, 1 / np.pi, 1 / 20, 1 / 50, 1.0])
ROAD_SCALE = np.concatenate([[1 / 50, 1 / 50], np.ones(MODALITY_DIMS["road_network"] - 2)])
ROUTE_SCALE = np.array([1 / 50, 1 / 50, 1.0, 1.0, 1.0])
ACTIVE_SCALE = np.array([1 / 20, 2.0, 1 / 50, 1.0, 1.0, 1.0, 1.0, 1.0, 1 / 50, 1.0, 1 / 20])
VALUE_SCALE = np.array([1 / 100, 1 / 100])

INPUT_SCALES = {
    "road_network": ROAD_SCALE,
    "route": ROUTE_SCALE,
    "active_agent": ACTIVE_SCALE,
}


@dataclass
class ForwardOut:
    """Network outputs for a (N,) batch of rows."""

    logits_accel: np.ndarray
    logits_steer: np.ndarray
    value: np.ndarray
    embedding: np.ndarray
    cache: Optional[Dict[str, Any]] = field(default=None, repr=False)


def _modality_inputs(obs: ObservationBatch):
    p = obs.policy
    n = p.active_agent.shape[0]
    return {
        "road_network": (p.road, p.road_valid),
        "route": (p.route, p.route_valid),
        "active_agent": (p.active_agent[:, None, :], np.ones((n, 1), dtype=bool)),
    }


def _check_shapes(obs: ObservationBatch) -> None:
    p = obs.policy
    if p.active_agent.ndim != 2:
        raise ValueError(f"expected observations with one leading axis, got active_agent {p.active_agent.shape}")
    n = p.active_agent.shape[0]
    expected = {
        "agents": AGENT_DIM,
        "road": MODALITY_DIMS["road_network"],
        "route": MODALITY_DIMS["route"],
    }
    for name, width in expected.items():
        arr = getattr(p, name)
        if arr.ndim != 3 or arr.shape[0] != n or arr.shape[2] != width:
            raise ValueError(f"{name} must have shape ({n}, slots, {width}), got {arr.shape}")
        valid = getattr(p, f"{name}_valid")
        if valid.shape != arr.shape[:2]:
            raise ValueError(f"{name}_valid must have shape {arr.shape[:2]}, got {valid.shape}")
    if p.active_agent.shape[1] != MODALITY_DIMS["active_agent"]:
        raise ValueError(f"active_agent must have width {MODALITY_DIMS['active_agent']}, got {p.active_agent.shape}")
    if obs.value.features.shape != (n, VALUE_DIM):
        raise ValueError(f"value features must have shape ({n}, {VALUE_DIM}), got {obs.value.features.shape}")


def _embed(x: np.ndarray, valid: np.ndarray, scale: np.ndarray, params: ModelParams, name: str):
    dtype = params.dtype
    xs = (x * scale).astype(dtype)
    proj = xs @ params[f"embed.{name}.w"] + params[f"embed.{name}.b"]
    null = np.broadcast_to(params[f"null.{name}"], (len(x), 1, proj.shape[-1]))
    tokens = np.concatenate([null, proj], axis=1)
    mask = np.concatenate([np.ones((len(x), 1), dtype=bool), valid.astype(bool)], axis=1)
    return tokens, mask, xs


def _embed_backward(d_tokens: np.ndarray, xs: np.ndarray, params: ModelParams, name: str, grads: ModelParams) -> None:
    _, g = layers.dense_backward(d_tokens[:, 1:], xs, params[f"embed.{name}.w"])
    grads.accumulate(f"embed.{name}", g)
    grads[f"null.{name}"] += d_tokens[:, 0].sum(axis=0)


def _feed_forward(z: np.ndarray, p: Dict[str, np.ndarray]):
    zn, c_ln = layers.layer_norm(z, p["ff_ln.g"], p["ff_ln.b"])
    h, _ = layers.dense(zn, p["ff1.w"], p["ff1.b"])
    a, positive = layers.relu(h)
    f, _ = layers.dense(a, p["ff2.w"], p["ff2.b"])
    return z + f, (c_ln, zn, a, positive)


def _feed_forward_backward(dz: np.ndarray, cache, p: Dict[str, np.ndarray]):
    c_ln, zn, a, positive = cache
    da, g2 = layers.dense_backward(dz, a, p["ff2.w"])
    dzn, g1 = layers.dense_backward(layers.relu_backward(da, positive), zn, p["ff1.w"])
    dz_ln, g_ln = layers.layer_norm_backward(dzn, c_ln)
    grads = {"ff1.w": g1["w"], "ff1.b": g1["b"], "ff2.w": g2["w"], "ff2.b": g2["b"],
             "ff_ln.g": g_ln["g"], "ff_ln.b": g_ln["b"]}
    return dz + dz_ln, grads


def _self_block(z, mask, p, heads):
    zn, c_ln = layers.layer_norm(z, p["ln.g"], p["ln.b"])
    a, c_at = layers.attention(zn, zn, mask, p, heads)
    out, c_ff = _feed_forward(z + a, p)
    return out, (c_ln, c_at, c_ff)


def _self_block_backward(dz, cache, p, heads):
    c_ln, c_at, c_ff = cache
    dz1, grads = _feed_forward_backward(dz, c_ff, p)
    dq, dkv, g_at = layers.attention_backward(dz1, c_at, p, heads)
    dz_ln, g_ln = layers.layer_norm_backward(dq + dkv, c_ln)
    grads.update(g_at)
    grads["ln.g"], grads["ln.b"] = g_ln["g"], g_ln["b"]
    return dz1 + dz_ln, grads


def _cross_block(z, tokens, mask, p, heads):
    qn, c_q = layers.layer_norm(z, p["ln_q.g"], p["ln_q.b"])
    kvn, c_kv = layers.layer_norm(tokens, p["ln_kv.g"], p["ln_kv.b"])
    a, c_at = layers.attention(qn, kvn, mask, p, heads)
    out, c_ff = _feed_forward(z + a, p)
    return out, (c_q, c_kv, c_at, c_ff)


def _cross_block_backward(dz, cache, p, heads):
    c_q, c_kv, c_at, c_ff = cache
    dz1, grads = _feed_forward_backward(dz, c_ff, p)
    dq, dkv, g_at = layers.attention_backward(dz1, c_at, p, heads)
    dz_q, g_q = layers.layer_norm_backward(dq, c_q)
    d_tokens, g_kv = layers.layer_norm_backward(dkv, c_kv)
    grads.update(g_at)
    grads["ln_q.g"], grads["ln_q.b"] = g_q["g"], g_q["b"]
    grads["ln_kv.g"], grads["ln_kv.b"] = g_kv["g"], g_kv["b"]
    return dz1 + dz_q, d_tokens, grads


def forward(params: ModelParams, obs: ObservationBatch, config: ModelConfig, keep_cache: bool = False) -> ForwardOut:
    """Run the network on observations with a single leading batch axis.

    Args:
        params: Network parameters; their dtype sets the compute precision
        obs: Observations of N rows
        config: Model config matching params
        keep_cache: Retain intermediates for backward

    Returns:
        ForwardOut with (N, n_accel) and (N, n_steer) logits, (N,) values
        and the (N, latent) pooled embedding

    Raises:
        ValueError: On an observation shape mismatch
    """
    _check_shapes(obs)
    heads = config.num_heads
    p = obs.policy
    cache: Dict[str, Any] = {}

    z, agent_mask, cache["agents.x"] = _embed(p.agents, p.agents_valid, AGENT_SCALE, params, "agents")
    z, cache["self_attn"] = _self_block(z, agent_mask, params.group("self_attn"), heads)
    inputs = _modality_inputs(obs)
    for modality in config.modality_order:
        x, valid = inputs[modality]
        tokens, mask, cache[f"{modality}.x"] = _embed(x, valid, INPUT_SCALES[modality], params, modality)
        z, cache[f"cross.{modality}"] = _cross_block(z, tokens, mask, params.group(f"cross.{modality}"), heads)
    embedding, cache["pool"] = layers.masked_mean(z, agent_mask)

    h = embedding
    for i in range(config.trunk_depth):
        h, cache[f"policy.block{i}"] = layers.residual_block(h, params.group(f"policy.block{i}"))
    cache["policy.h"] = h
    logits_accel, _ = layers.dense(h, params["policy.accel.w"], params["policy.accel.b"])
    logits_steer, _ = layers.dense(h, params["policy.steer.w"], params["policy.steer.b"])

    vx = (obs.value.features * VALUE_SCALE).astype(params.dtype)
    ve, _ = layers.dense(vx, params["value.embed.w"], params["value.embed.b"])
    ve, cache["value.positive"] = layers.relu(ve)
    cache["value.x"] = vx
    u = np.concatenate([embedding, ve], axis=1)
    for i in range(config.trunk_depth):
        u, cache[f"value.block{i}"] = layers.residual_block(u, params.group(f"value.block{i}"))
    cache["value.u"] = u
    value, _ = layers.dense(u, params["value.out.w"], params["value.out.b"])

    return ForwardOut(
        logits_accel=logits_accel,
        logits_steer=logits_steer,
        value=value[:, 0],
        embedding=embedding,
        cache=cache if keep_cache else None,
    )


def backward(
    params: ModelParams,
    out: ForwardOut,
    config: ModelConfig,
    d_logits_accel: np.ndarray,
    d_logits_steer: np.ndarray,
    d_value: np.ndarray,
) -> ModelParams:
    """Exact gradient of a scalar loss given its gradients w.r.t. the outputs.

    Args:
        params: Parameters used in the forward pass
        out: ForwardOut produced with keep_cache=True
        config: Model config
        d_logits_accel: dLoss/dlogits_accel, (N, n_accel)
        d_logits_steer: dLoss/dlogits_steer, (N, n_steer)
        d_value: dLoss/dvalue, (N,)

    Returns:
        Gradients with the same flat layout as params
    """
    if out.cache is None:
        raise ValueError("backward needs a forward pass run with keep_cache=True")
    cache = out.cache
    heads = config.num_heads
    grads = params.zeros_like()
    dtype = params.dtype
    d_logits_accel = np.asarray(d_logits_accel, dtype=dtype)
    d_logits_steer = np.asarray(d_logits_steer, dtype=dtype)
    d_value = np.asarray(d_value, dtype=dtype)

    # Value path
    du, g = layers.dense_backward(d_value[:, None], cache["value.u"], params["value.out.w"])
    grads.accumulate("value.out", g)
    for i in reversed(range(config.trunk_depth)):
        du, g = layers.residual_block_backward(du, cache[f"value.block{i}"], params.group(f"value.block{i}"))
        grads.accumulate(f"value.block{i}", g)
    d = config.latent_dim
    d_embedding = du[:, :d]
    dve = layers.relu_backward(du[:, d:], cache["value.positive"])
    _, g = layers.dense_backward(dve, cache["value.x"], params["value.embed.w"])
    grads.accumulate("value.embed", g)

    # Policy path
    dh, g = layers.dense_backward(d_logits_accel, cache["policy.h"], params["policy.accel.w"])
    grads.accumulate("policy.accel", g)
    dh_steer, g = layers.dense_backward(d_logits_steer, cache["policy.h"], params["policy.steer.w"])
    grads.accumulate("policy.steer", g)
    dh = dh + dh_steer
    for i in reversed(range(config.trunk_depth)):
        dh, g = layers.residual_block_backward(dh, cache[f"policy.block{i}"], params.group(f"policy.block{i}"))
        grads.accumulate(f"policy.block{i}", g)
    d_embedding = d_embedding + dh

    # Encoder
    dz = layers.masked_mean_backward(d_embedding, cache["pool"])
    for modality in reversed(config.modality_order):
        p = params.group(f"cross.{modality}")
        dz, d_tokens, g = _cross_block_backward(dz, cache[f"cross.{modality}"], p, heads)
        grads.accumulate(f"cross.{modality}", g)
        _embed_backward(d_tokens, cache[f"{modality}.x"], params, modality, grads)
    dz, g = _self_block_backward(dz, cache["self_attn"], params.group("self_attn"), heads)
    grads.accumulate("self_attn", g)
    _embed_backward(dz, cache["agents.x"], params, "agents", grads)
    return grads
