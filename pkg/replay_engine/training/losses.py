"""Behavioral cloning and PPO losses with their exact parameter gradients."""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import log_softmax

from replay_engine.config.settings import ModelConfig, RlConfig
from replay_engine.models.network import backward, forward
from replay_engine.models.params import ModelParams
from replay_engine.sim.observations import ObservationBatch
from replay_engine.training.replay import SequenceBatch
from replay_engine.training.returns import VTraceOut, vtrace

logger = logging.getLogger(__name__)

ADVANTAGE_EPS = 1e-8

LossResult = Tuple[float, ModelParams, Dict[str, float]]


def _one_hot(index: np.ndarray, size: int) -> np.ndarray:
    return (index[:, None] == np.arange(size)).astype(np.float64)


def _picked(logp: np.ndarray, index: np.ndarray) -> np.ndarray:
    return logp[np.arange(len(index)), index]


def _head_entropy(logp: np.ndarray) -> np.ndarray:
    return -np.sum(np.exp(logp) * logp, axis=-1)


def _entropy_grad(logp: np.ndarray) -> np.ndarray:
    """dH/dlogits of one categorical head."""
    h = _head_entropy(logp)
    return -np.exp(logp) * (logp + h[:, None])


def bc_loss(
    params: ModelParams,
    obs: ObservationBatch,
    actions: np.ndarray,
    value_targets: np.ndarray,
    model_config: ModelConfig,
    value_loss_scale: float,
    mask: Optional[np.ndarray] = None,
) -> LossResult:
    """Cross-entropy on both action heads plus scaled value regression.

    loss = CE(accel) + CE(steer) + value_loss_scale * MSE(value, G), each a
    mean over the rows where mask is set.

    Args:
        params: Network parameters
        obs: N observation rows
        actions: (N, 2) expert action indices
        value_targets: (N,) discounted returns of the logged trajectory
        model_config: Model config matching params
        value_loss_scale: Weight of the value term
        mask: Optional (N,) row mask; all rows by default

    Returns:
        (loss, gradients, stats)
    """
    actions = np.asarray(actions, dtype=np.int64)
    n = actions.shape[0]
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    weight = mask / max(int(mask.sum()), 1)

    out = forward(params, obs, model_config, keep_cache=True)
    logp_a = log_softmax(out.logits_accel.astype(np.float64), axis=-1)
    logp_s = log_softmax(out.logits_steer.astype(np.float64), axis=-1)
    ce_a = float(np.sum(weight * np.where(mask, -_picked(logp_a, actions[:, 0]), 0.0)))
    ce_s = float(np.sum(weight * np.where(mask, -_picked(logp_s, actions[:, 1]), 0.0)))
    err = np.where(mask, out.value.astype(np.float64) - np.where(mask, value_targets, 0.0), 0.0)
    mse = float(np.sum(weight * np.square(err)))
    loss = ce_a + ce_s + value_loss_scale * mse

    d_accel = weight[:, None] * (np.exp(logp_a) - _one_hot(actions[:, 0], logp_a.shape[1]))
    d_steer = weight[:, None] * (np.exp(logp_s) - _one_hot(actions[:, 1], logp_s.shape[1]))
    d_value = weight * value_loss_scale * 2.0 * err
    grads = backward(params, out, model_config, d_accel, d_steer, d_value)
    stats = {"loss": loss, "ce_accel": ce_a, "ce_steer": ce_s, "value_mse": mse}
    return loss, grads, stats


def sequence_outputs(params: ModelParams, batch: SequenceBatch, model_config: ModelConfig, keep_cache: bool = False):
    """Forward pass over every (sequence, step) observation, bootstrap step included."""
    return forward(params, batch.obs.flatten(2), model_config, keep_cache=keep_cache)


def vtrace_targets(
    values: np.ndarray,
    log_probs: np.ndarray,
    batch: SequenceBatch,
    gamma: float,
    rl: RlConfig,
) -> VTraceOut:
    """V-trace targets from the current values (N, L + 1) and log pi (N, L)."""
    log_rhos = np.where(batch.mask, log_probs - batch.behavior_log_probs, 0.0)
    return vtrace(
        values[:, :-1], values[:, -1], batch.rewards, batch.dones, batch.mask,
        log_rhos, gamma, rl.rho_bar, rl.c_bar,
    )


def ppo_loss(
    params: ModelParams,
    batch: SequenceBatch,
    model_config: ModelConfig,
    rl: RlConfig,
    gamma: float,
    targets: Optional[VTraceOut] = None,
) -> LossResult:
    """Clipped-surrogate PPO loss on V-trace advantages.

    loss = -mean(min(r A, clip(r, 1 - eps, 1 + eps) A))
           + value_loss_scale * mean((v - vs)^2) - entropy_coef * mean(H)
    with r = pi / mu and A the batch-normalized V-trace advantages. The
    targets are constants of the gradient; when omitted they are computed
    from this forward pass.

    Returns:
        (loss, gradients, stats)
    """
    N, L = batch.size, batch.length
    out = sequence_outputs(params, batch, model_config, keep_cache=True)
    n_a = out.logits_accel.shape[1]
    n_s = out.logits_steer.shape[1]
    logp_a = log_softmax(out.logits_accel.astype(np.float64), axis=-1).reshape(N, L + 1, n_a)[:, :L]
    logp_s = log_softmax(out.logits_steer.astype(np.float64), axis=-1).reshape(N, L + 1, n_s)[:, :L]
    values = out.value.astype(np.float64).reshape(N, L + 1)

    mask = batch.mask
    flat_a = logp_a.reshape(N * L, n_a)
    flat_s = logp_s.reshape(N * L, n_s)
    act = batch.actions.reshape(N * L, 2)
    log_probs = (_picked(flat_a, act[:, 0]) + _picked(flat_s, act[:, 1])).reshape(N, L)
    if targets is None:
        targets = vtrace_targets(values, log_probs, batch, gamma, rl)

    count = max(int(mask.sum()), 1)
    weight = mask / count
    adv = targets.advantages[mask]
    adv_mean = adv.mean() if adv.size else 0.0
    adv_std = adv.std() if adv.size else 0.0
    advantages = np.where(mask, (targets.advantages - adv_mean) / (adv_std + ADVANTAGE_EPS), 0.0)

    log_ratio = np.where(mask, log_probs - batch.behavior_log_probs, 0.0)
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - rl.clip, 1.0 + rl.clip)
    surrogate = ratio * advantages
    surrogate_clipped = clipped * advantages
    unclipped_active = surrogate <= surrogate_clipped
    policy_loss = -float(np.sum(weight * np.minimum(surrogate, surrogate_clipped)))

    err = np.where(mask, values[:, :L] - targets.vs, 0.0)
    value_loss = float(np.sum(weight * np.square(err)))
    entropy = _head_entropy(logp_a) + _head_entropy(logp_s)
    mean_entropy = float(np.sum(weight * entropy))
    loss = policy_loss + rl.value_loss_scale * value_loss - rl.entropy_coef * mean_entropy

    d_logp = np.where(unclipped_active, -weight * surrogate, 0.0).reshape(N * L, 1)
    w_flat = weight.reshape(N * L, 1)
    d_accel = d_logp * (_one_hot(act[:, 0], n_a) - np.exp(flat_a)) - rl.entropy_coef * w_flat * _entropy_grad(flat_a)
    d_steer = d_logp * (_one_hot(act[:, 1], n_s) - np.exp(flat_s)) - rl.entropy_coef * w_flat * _entropy_grad(flat_s)
    d_value = np.zeros((N, L + 1))
    d_value[:, :L] = rl.value_loss_scale * 2.0 * weight * err

    def with_bootstrap_rows(d: np.ndarray) -> np.ndarray:
        full = np.zeros((N, L + 1, d.shape[-1]))
        full[:, :L] = d.reshape(N, L, -1)
        return full.reshape(N * (L + 1), -1)

    grads = backward(
        params, out, model_config,
        with_bootstrap_rows(d_accel), with_bootstrap_rows(d_steer), d_value.reshape(-1),
    )
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": mean_entropy,
        "clip_fraction": float(np.sum(weight * (np.abs(ratio - 1.0) > rl.clip))),
        "mean_rho": float(np.sum(weight * ratio)),
    }
    return loss, grads, stats
