"""Forward/backward pairs for the network building blocks.

Every forward returns (output, cache); the matching backward takes the
upstream gradient and the cache and returns the input gradient plus a dict
of parameter gradients keyed by the parameter's local name.
"""

from typing import Dict, NamedTuple, Tuple

import numpy as np
from scipy.special import softmax

Grads = Dict[str, np.ndarray]

LN_EPS = 1e-5


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, x


def dense_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, Grads]:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, {"w": x2.T @ dy2, "b": dy2.sum(axis=0)}


def relu(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy: np.ndarray, positive: np.ndarray) -> np.ndarray:
    return dy * positive


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma)


def layer_norm_backward(dy: np.ndarray, cache) -> Tuple[np.ndarray, Grads]:
    xhat, inv_std, gamma = cache
    n = xhat.shape[-1]
    dxhat = dy * gamma
    dx = inv_std / n * (
        n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, {
        "g": (dy * xhat).reshape(-1, n).sum(axis=0),
        "b": dy.reshape(-1, n).sum(axis=0),
    }


class AttentionCache(NamedTuple):
    xq: np.ndarray
    xkv: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    merged: np.ndarray


def _split(x: np.ndarray, heads: int) -> np.ndarray:
    B, N, d = x.shape
    return x.reshape(B, N, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


def attention(xq: np.ndarray, xkv: np.ndarray, key_mask: np.ndarray, p: Dict[str, np.ndarray], heads: int):
    """Multi-head attention of queries xq (B, Nq, d) over keys xkv (B, Nk, d).

    Keys with key_mask False get -inf scores and exactly zero weight; every
    row must keep at least one valid key.
    """
    q = _split(xq @ p["q.w"] + p["q.b"], heads)
    k = _split(xkv @ p["k.w"] + p["k.b"], heads)
    v = _split(xkv @ p["v.w"] + p["v.b"], heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    attn = softmax(scores, axis=-1)
    merged = _merge(attn @ v)
    out = merged @ p["o.w"] + p["o.b"]
    return out, AttentionCache(xq, xkv, q, k, v, attn, merged)


def attention_backward(dy: np.ndarray, cache: AttentionCache, p: Dict[str, np.ndarray], heads: int):
    """Returns (d xq, d xkv, grads)."""
    grads: Grads = {}
    d_merged, g = dense_backward(dy, cache.merged, p["o.w"])
    grads["o.w"], grads["o.b"] = g["w"], g["b"]

    d_ctx = _split(d_merged, heads)
    d_attn = d_ctx @ cache.v.transpose(0, 1, 3, 2)
    dv = cache.attn.transpose(0, 1, 3, 2) @ d_ctx
    d_scores = cache.attn * (d_attn - (d_attn * cache.attn).sum(axis=-1, keepdims=True))
    d_scores *= 1.0 / np.sqrt(cache.q.shape[-1])
    dq = d_scores @ cache.k
    dk = d_scores.transpose(0, 1, 3, 2) @ cache.q

    dxq, g = dense_backward(_merge(dq), cache.xq, p["q.w"])
    grads["q.w"], grads["q.b"] = g["w"], g["b"]
    dxk, g = dense_backward(_merge(dk), cache.xkv, p["k.w"])
    grads["k.w"], grads["k.b"] = g["w"], g["b"]
    dxv, g = dense_backward(_merge(dv), cache.xkv, p["v.w"])
    grads["v.w"], grads["v.b"] = g["w"], g["b"]
    return dxq, dxk + dxv, grads


def residual_block(x: np.ndarray, p: Dict[str, np.ndarray]):
    """x + fc2(relu(fc1(x)))."""
    h, _ = dense(x, p["fc1.w"], p["fc1.b"])
    a, positive = relu(h)
    y, _ = dense(a, p["fc2.w"], p["fc2.b"])
    return x + y, (x, a, positive)


def residual_block_backward(dy: np.ndarray, cache, p: Dict[str, np.ndarray]) -> Tuple[np.ndarray, Grads]:
    x, a, positive = cache
    da, g2 = dense_backward(dy, a, p["fc2.w"])
    dh = relu_backward(da, positive)
    dx, g1 = dense_backward(dh, x, p["fc1.w"])
    return dy + dx, {"fc1.w": g1["w"], "fc1.b": g1["b"], "fc2.w": g2["w"], "fc2.b": g2["b"]}


def masked_mean(x: np.ndarray, mask: np.ndarray):
    """Mean over axis 1 of the rows where mask is set; (B, N, d) -> (B, d)."""
    weights = mask.astype(x.dtype) / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    return np.einsum("bn,bnd->bd", weights, np.where(mask[..., None], x, 0.0)), weights


def masked_mean_backward(dy: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return weights[..., None] * dy[:, None, :]
