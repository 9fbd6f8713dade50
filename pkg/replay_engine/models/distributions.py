"""Factorized categorical action distribution over (accel, steering-rate) bins."""

from typing import Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    index = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(index, probs.shape[-1] - 1)


def joint_log_prob(logits_accel: np.ndarray, logits_steer: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """log pi(a) = log p(accel) + log p(steer) for (N, 2) index pairs."""
    rows = np.arange(len(actions))
    return (
        log_softmax(logits_accel, axis=-1)[rows, actions[:, 0]]
        + log_softmax(logits_steer, axis=-1)[rows, actions[:, 1]]
    )


def entropy(logits_accel: np.ndarray, logits_steer: np.ndarray) -> np.ndarray:
    """Joint entropy of the two independent heads, per row."""
    total = np.zeros(logits_accel.shape[0])
    for logits in (logits_accel, logits_steer):
        logp = log_softmax(logits, axis=-1)
        total = total - np.sum(np.exp(logp) * logp, axis=-1)
    return total


def sample_actions(
    logits_accel: np.ndarray,
    logits_steer: np.ndarray,
    uniforms: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Independent categorical samples per head by inverse CDF.

    Args:
        logits_accel: (N, n_accel)
        logits_steer: (N, n_steer)
        uniforms: (N, 2) uniforms in [0, 1); drawn from rng when omitted
        rng: Source of uniforms

    Returns:
        (actions (N, 2), joint log-prob (N,))
    """
    n = logits_accel.shape[0]
    if uniforms is None:
        uniforms = (rng or np.random.default_rng()).random((n, 2))
    actions = np.stack([
        _inverse_cdf(softmax(logits_accel, axis=-1), uniforms[:, 0]),
        _inverse_cdf(softmax(logits_steer, axis=-1), uniforms[:, 1]),
    ], axis=1).astype(np.int64)
    return actions, joint_log_prob(logits_accel, logits_steer, actions)


def greedy_actions(logits_accel: np.ndarray, logits_steer: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Argmax of each head with the joint log-prob of the pick."""
    actions = np.stack([np.argmax(logits_accel, axis=-1), np.argmax(logits_steer, axis=-1)], axis=1).astype(np.int64)
    return actions, joint_log_prob(logits_accel, logits_steer, actions)
