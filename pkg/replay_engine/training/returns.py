"""Discounted returns and V-trace off-policy targets."""

from typing import NamedTuple

import numpy as np


class VTraceOut(NamedTuple):
    """Value targets vs and policy-gradient advantages, both (N, L)."""

    vs: np.ndarray
    advantages: np.ndarray


def discounted_return(rewards: np.ndarray, mask: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum over k >= t of gamma^(k-t) r_k, counting only masked-in steps.

    Args:
        rewards: (..., T) rewards
        mask: (..., T) live-step mask
        gamma: Discount factor

    Returns:
        (..., T) returns; zero wherever the mask is zero
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    r = np.where(mask, rewards, 0.0)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in reversed(range(r.shape[-1])):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return np.where(mask, out, 0.0)


def vtrace(
    values: np.ndarray,
    bootstrap: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    mask: np.ndarray,
    log_rhos: np.ndarray,
    gamma: float,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
) -> VTraceOut:
    """V-trace targets for a batch of fixed-length sequences.

    Computed by the reverse recursion
        vs_t - v_t = delta_t + gamma (1 - done_t) c_t (vs_{t+1} - v_{t+1})
    where delta_t = rho_t (r_t + gamma (1 - done_t) v_{t+1} - v_t). The
    correction is zero on masked-out steps, so a masked step following a
    live one acts as a plain bootstrap from its value.

    Args:
        values: (N, L) value estimates v_t
        bootstrap: (N,) value of the state after the last step
        rewards: (N, L)
        dones: (N, L) terminal flags
        mask: (N, L) live-step mask
        log_rhos: (N, L) log pi(a_t) - log mu(a_t)
        gamma: Discount factor
        rho_bar: Clip of the importance weights in delta
        c_bar: Clip of the trace-cutting weights

    Returns:
        VTraceOut with vs and advantages, zero on masked steps
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    rewards = np.where(mask, rewards, 0.0)
    log_rhos = np.where(mask, log_rhos, 0.0)
    discounts = gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * mask

    rhos = np.exp(log_rhos)
    clipped_rhos = np.minimum(rho_bar, rhos)
    cs = np.minimum(c_bar, rhos)

    next_values = np.concatenate([values[:, 1:], np.asarray(bootstrap, dtype=np.float64)[:, None]], axis=1)
    deltas = np.where(mask, clipped_rhos * (rewards + discounts * next_values - values), 0.0)

    corrections = np.zeros_like(values)
    acc = np.zeros(values.shape[0])
    for t in reversed(range(values.shape[1])):
        acc = np.where(mask[:, t], deltas[:, t] + discounts[:, t] * cs[:, t] * acc, 0.0)
        corrections[:, t] = acc
    vs = values + corrections

    next_vs = np.concatenate([vs[:, 1:], np.asarray(bootstrap, dtype=np.float64)[:, None]], axis=1)
    advantages = np.where(mask, clipped_rhos * (rewards + discounts * next_vs - values), 0.0)
    return VTraceOut(vs=np.where(mask, vs, 0.0), advantages=advantages)
