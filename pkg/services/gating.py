"""
Gating Primitives
Sigmoid gates and the gated blend shared by the user and knowledge-graph
updates, each with a hand-written backward pass
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from services.exceptions import ShapeError

ArrayLike = Union[np.ndarray, float]


def sigmoid(x: ArrayLike) -> ArrayLike:
    """Numerically stable logistic function"""
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=float)
    z = np.exp(z - z.max())
    return z / z.sum()


def check_dims(*vectors: np.ndarray, dim: int = None):
    """Raise ShapeError unless every vector is 1-D of the same length"""
    dim = vectors[0].shape[0] if dim is None else dim
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != dim:
            raise ShapeError(f"Expected vector of length {dim}, got shape {v.shape}")


def gate_coefficient(W: np.ndarray, b: float, v: np.ndarray) -> float:
    """alpha = sigmoid(W . v + b), the proportion of old information kept"""
    W, v = np.asarray(W, dtype=float), np.asarray(v, dtype=float)
    check_dims(W, v)
    return float(sigmoid(W @ v + b))


# ============================================
# GATED BLEND
# ============================================


@dataclass(frozen=True, eq=False)
class BlendCache:
    old: np.ndarray
    cand: np.ndarray
    alpha: float
    out: np.ndarray
    squash: bool


def gated_blend(old: np.ndarray, cand: np.ndarray, W_gate: np.ndarray, b_gate: float,
                squash: bool = True) -> Tuple[np.ndarray, BlendCache]:
    """
    out = act(alpha * old + (1 - alpha) * cand), alpha = sigmoid(W_gate . old + b_gate)

    act is the logistic function when squash is set, identity otherwise.
    """
    check_dims(old, cand, W_gate)
    alpha = gate_coefficient(W_gate, b_gate, old)
    pre = alpha * old + (1.0 - alpha) * cand
    out = sigmoid(pre) if squash else pre
    return out, BlendCache(old, cand, alpha, out, squash)


def gated_blend_backward(d_out: np.ndarray, cache: BlendCache,
                         W_gate: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Returns (d_old, d_cand, d_W_gate, d_b_gate)"""
    d_pre = d_out * cache.out * (1.0 - cache.out) if cache.squash else d_out
    alpha = cache.alpha
    d_alpha = float(d_pre @ (cache.old - cache.cand))
    d_gate_pre = d_alpha * alpha * (1.0 - alpha)
    d_old = alpha * d_pre + d_gate_pre * W_gate
    d_cand = (1.0 - alpha) * d_pre
    return d_old, d_cand, d_gate_pre * cache.old, d_gate_pre


# ============================================
# INTERACTION UPDATE (user / visited POI)
# ============================================


@dataclass(frozen=True, eq=False)
class InteractionCache:
    other: np.ndarray
    context: np.ndarray
    inner: float
    blend: BlendCache


def interaction_update(old: np.ndarray, other: np.ndarray, context: np.ndarray,
                       W: np.ndarray, W_gate: np.ndarray, b_gate: float
                       ) -> Tuple[np.ndarray, InteractionCache]:
    """
    sigmoid(alpha * old + (1 - alpha) * W * (other . context))

    The interaction other^T . context is a scalar, so the candidate is the
    weight vector W scaled by it.
    """
    check_dims(old, other, context, W)
    inner = float(other @ context)
    out, blend = gated_blend(old, W * inner, W_gate, b_gate, squash=True)
    return out, InteractionCache(other, context, inner, blend)


def interaction_update_backward(d_out: np.ndarray, cache: InteractionCache, W: np.ndarray,
                                W_gate: np.ndarray):
    """Returns (d_old, d_other, d_context, d_W, d_W_gate, d_b_gate)"""
    d_old, d_cand, d_W_gate, d_b_gate = gated_blend_backward(d_out, cache.blend, W_gate)
    d_W = d_cand * cache.inner
    d_inner = float(d_cand @ W)
    return (d_old, d_inner * cache.context, d_inner * cache.other,
            d_W, d_W_gate, d_b_gate)
