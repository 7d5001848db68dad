"""
Representation Gradient Engine
Parameters of the user, temporal and knowledge-graph updates, provenance
records of the last write to every embedding, the expected-reward surrogate
loss with its analytic gradient, and a finite-difference checker.

Gradients are truncated after one step: the embeddings a state slot was
computed from are constants, only the parameters applied in the last update
are differentiated.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from services.exceptions import NumericError, ShapeError
from services.gating import (BlendCache, InteractionCache, gated_blend,
                             gated_blend_backward, interaction_update,
                             interaction_update_backward, softmax)
from services.imitation_dqn import QNetwork
from services.spatial_kg import KGUpdateParams, Relation
from services.user_state import (TemporalCache, UserUpdateParams,
                                 temporal_backward, temporal_forward)

logger = logging.getLogger(__name__)

LOSS_CLAMP = 1.0 - 1e-7

PARAM_FIELDS = ("W_u", "W_au", "b_au", "W_T1", "W_T2", "b_T",
                "W_p", "W_ap", "b_ap", "W_at", "b_at", "W_ah", "b_ah")
SCALAR_FIELDS = frozenset({"b_au", "b_ap", "b_at", "b_ah"})


def _shape(name: str, N: int, M: int) -> Tuple[int, ...]:
    if name in SCALAR_FIELDS:
        return ()
    if name == "W_T1":
        return (N, M)
    if name == "W_T2":
        return (3,)
    return (N,)


@dataclass
class RepresentationParams:
    """All representation-module parameters as one flat record"""
    W_u: np.ndarray
    W_au: np.ndarray
    b_au: float
    W_T1: np.ndarray
    W_T2: np.ndarray
    b_T: np.ndarray
    W_p: np.ndarray
    W_ap: np.ndarray
    b_ap: float
    W_at: np.ndarray
    b_at: float
    W_ah: np.ndarray
    b_ah: float

    @property
    def N(self) -> int:
        return self.W_u.shape[0]

    @property
    def M(self) -> int:
        return self.W_T1.shape[1]

    @classmethod
    def zeros(cls, N: int, M: int) -> "RepresentationParams":
        return cls(**{name: 0.0 if name in SCALAR_FIELDS else np.zeros(_shape(name, N, M))
                      for name in PARAM_FIELDS})

    @classmethod
    def init(cls, N: int, M: int, seed: int) -> "RepresentationParams":
        """Weights ~ N(0, 1/sqrt(N)), W_T1 ~ N(0, 1/sqrt(M)), W_T2 ~ U(0, 2/3), biases 0"""
        rng = np.random.default_rng(seed)
        params = cls.zeros(N, M)
        for name in ("W_u", "W_au", "W_p", "W_ap", "W_at", "W_ah"):
            setattr(params, name, rng.normal(0.0, 1.0 / np.sqrt(N), N))
        params.W_T1 = rng.normal(0.0, 1.0 / np.sqrt(M), (N, M))
        params.W_T2 = rng.uniform(0.0, 2.0 / 3.0, 3)
        return params

    @property
    def user(self) -> UserUpdateParams:
        return UserUpdateParams(self.W_u, self.W_au, self.b_au, self.W_T1, self.W_T2, self.b_T)

    @property
    def kg(self) -> KGUpdateParams:
        return KGUpdateParams(self.W_p, self.W_ap, self.b_ap, self.W_at, self.b_at,
                              self.W_ah, self.b_ah)

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(np.asarray(getattr(self, name), dtype=float))
                               for name in PARAM_FIELDS])

    @classmethod
    def unflatten(cls, flat: np.ndarray, N: int, M: int) -> "RepresentationParams":
        flat = np.asarray(flat, dtype=float)
        values, offset = {}, 0
        for name in PARAM_FIELDS:
            shape = _shape(name, N, M)
            size = int(np.prod(shape))
            chunk = flat[offset:offset + size]
            values[name] = float(chunk[0]) if name in SCALAR_FIELDS else chunk.reshape(shape).copy()
            offset += size
        if offset != flat.shape[0]:
            raise ShapeError(f"Flat vector has {flat.shape[0]} entries, expected {offset}")
        return cls(**values)

    def copy(self) -> "RepresentationParams":
        return RepresentationParams.unflatten(self.flatten(), self.N, self.M)

    def accumulate(self, name: str, value):
        setattr(self, name, getattr(self, name) + value)


# ============================================
# PROVENANCE
# ============================================


@dataclass(frozen=True, eq=False)
class VisitRecord:
    """Inputs of one visit's user and visited-POI updates"""
    user_id: str
    poi: str
    u_old: np.ndarray
    h_old: np.ndarray
    T: np.ndarray


@dataclass(frozen=True, eq=False)
class HeadRecord:
    """
    Inputs of the last write to one POI head

    kind "visit": the head was the visited POI of `visit`.
    kind "sibling": the head was refreshed from the visited POI's new tails,
    along `paths` in order.
    """
    kind: str
    visit: VisitRecord
    h_old: Optional[np.ndarray] = None
    paths: Tuple[Relation, ...] = ()
    tails_old: Dict[Relation, np.ndarray] = field(default_factory=dict)
    relations: Dict[Relation, np.ndarray] = field(default_factory=dict)
    tail_sigmoid: bool = False


@dataclass(frozen=True, eq=False)
class StateProvenance:
    """
    How each slot of a state vector depends on the parameters

    A slot without a record is a constant (cold start, never-updated head,
    pooled heads).
    """
    T: np.ndarray
    user_record: Optional[VisitRecord]
    u_const: np.ndarray
    head_record: Optional[HeadRecord]
    h_const: np.ndarray


# ============================================
# DERIVATIONS
# ============================================


@dataclass
class UserCache:
    temporal: TemporalCache
    update: InteractionCache


def derive_user(params: RepresentationParams, rec: VisitRecord) -> Tuple[np.ndarray, UserCache]:
    context, tcache = temporal_forward(params.user, rec.T)
    u, ucache = interaction_update(rec.u_old, rec.h_old, context,
                                   params.W_u, params.W_au, params.b_au)
    return u, UserCache(tcache, ucache)


def derive_user_backward(d_u: np.ndarray, cache: UserCache, params: RepresentationParams,
                         grads: RepresentationParams):
    _, _, d_context, d_W, d_Wg, d_bg = interaction_update_backward(
        d_u, cache.update, params.W_u, params.W_au)
    grads.accumulate("W_u", d_W)
    grads.accumulate("W_au", d_Wg)
    grads.accumulate("b_au", d_bg)
    _accumulate_temporal(d_context, cache.temporal, params, grads)


@dataclass
class HeadCache:
    temporal: TemporalCache
    visit: InteractionCache
    tail_blends: List[BlendCache] = field(default_factory=list)
    head_blends: List[BlendCache] = field(default_factory=list)


def derive_head(params: RepresentationParams, rec: HeadRecord) -> Tuple[np.ndarray, HeadCache]:
    visit = rec.visit
    context, tcache = temporal_forward(params.user, visit.T)
    h_visit, vcache = interaction_update(visit.h_old, visit.u_old, context,
                                         params.W_p, params.W_ap, params.b_ap)
    cache = HeadCache(tcache, vcache)
    if rec.kind == "visit":
        return h_visit, cache
    head = rec.h_old
    for relation in rec.paths:
        rel = rec.relations[relation]
        tail, tail_cache = gated_blend(rec.tails_old[relation], h_visit + rel,
                                       params.W_at, params.b_at, squash=rec.tail_sigmoid)
        head, head_cache = gated_blend(head, tail - rel, params.W_ah, params.b_ah, squash=True)
        cache.tail_blends.append(tail_cache)
        cache.head_blends.append(head_cache)
    return head, cache


def derive_head_backward(d_h: np.ndarray, cache: HeadCache, params: RepresentationParams,
                         grads: RepresentationParams):
    d_visit = np.zeros_like(d_h)
    for tail_cache, head_cache in zip(reversed(cache.tail_blends), reversed(cache.head_blends)):
        d_h, d_tail, d_W, d_b = gated_blend_backward(d_h, head_cache, params.W_ah)
        grads.accumulate("W_ah", d_W)
        grads.accumulate("b_ah", d_b)
        _, d_cand, d_W, d_b = gated_blend_backward(d_tail, tail_cache, params.W_at)
        grads.accumulate("W_at", d_W)
        grads.accumulate("b_at", d_b)
        d_visit = d_visit + d_cand
    if not cache.head_blends:
        d_visit = d_h
    _, _, d_context, d_W, d_Wg, d_bg = interaction_update_backward(
        d_visit, cache.visit, params.W_p, params.W_ap)
    grads.accumulate("W_p", d_W)
    grads.accumulate("W_ap", d_Wg)
    grads.accumulate("b_ap", d_bg)
    _accumulate_temporal(d_context, cache.temporal, params, grads)


def _accumulate_temporal(d_context: np.ndarray, cache: TemporalCache,
                         params: RepresentationParams, grads: RepresentationParams):
    d_W1, d_W2, d_b = temporal_backward(d_context, cache, params.user)
    grads.accumulate("W_T1", d_W1)
    grads.accumulate("W_T2", d_W2)
    grads.accumulate("b_T", d_b)


# ============================================
# SURROGATE LOSS
# ============================================


def expected_reward(q: np.ndarray, per_action_reward: np.ndarray, tau: float) -> Tuple[float, np.ndarray]:
    """(r_bar, p) with p = softmax(q / tau) and r_bar = p . R"""
    p = softmax(np.asarray(q, dtype=float) / tau)
    return float(p @ per_action_reward), p


def representation_loss(q: np.ndarray, per_action_reward: np.ndarray, tau: float) -> float:
    """log(1 - clamp(r_bar)) over the softmax(q / tau) action distribution"""
    r_bar, _ = expected_reward(q, per_action_reward, tau)
    return float(np.log1p(-min(r_bar, LOSS_CLAMP)))


def representation_loss_grad(q: np.ndarray, per_action_reward: np.ndarray,
                             tau: float) -> Tuple[float, np.ndarray]:
    """Loss and dL/dq"""
    R = np.asarray(per_action_reward, dtype=float)
    r_bar, p = expected_reward(q, R, tau)
    loss = float(np.log1p(-min(r_bar, LOSS_CLAMP)))
    d_rbar = -1.0 / (1.0 - r_bar) if r_bar < LOSS_CLAMP else 0.0
    return loss, d_rbar * p * (R - r_bar) / tau


def derive_state(params: RepresentationParams, prov: StateProvenance):
    """Re-derive the state vector from its provenance under params"""
    context, tcache = temporal_forward(params.user, prov.T)
    ucache = hcache = None
    if prov.user_record is not None:
        u, ucache = derive_user(params, prov.user_record)
    else:
        u = prov.u_const
    if prov.head_record is not None:
        h, hcache = derive_head(params, prov.head_record)
    else:
        h = prov.h_const
    return np.concatenate([u, h, context]), (tcache, ucache, hcache)


def surrogate_loss(params: RepresentationParams, prov: StateProvenance, net: QNetwork,
                   per_action_reward: np.ndarray, tau: float) -> float:
    s, _ = derive_state(params, prov)
    q, _ = net.forward(s)
    return representation_loss(q, per_action_reward, tau)


def surrogate_loss_and_grad(params: RepresentationParams, prov: StateProvenance, net: QNetwork,
                            per_action_reward: np.ndarray,
                            tau: float) -> Tuple[float, RepresentationParams]:
    """Surrogate loss and its gradient w.r.t. every representation parameter"""
    N = params.N
    s, (tcache, ucache, hcache) = derive_state(params, prov)
    q, pre = net.forward(s)
    loss, d_q = representation_loss_grad(q, per_action_reward, tau)
    d_s = net.input_gradient(d_q, pre)
    grads = RepresentationParams.zeros(N, params.M)
    _accumulate_temporal(d_s[2 * N:], tcache, params, grads)
    if ucache is not None:
        derive_user_backward(d_s[:N], ucache, params, grads)
    if hcache is not None:
        derive_head_backward(d_s[N:2 * N], hcache, params, grads)
    return loss, grads


def representation_step(params: RepresentationParams, grads: RepresentationParams,
                        lr1: float) -> RepresentationParams:
    """theta <- theta - lr1 * grad; NumericError when the gradient is not finite"""
    g = grads.flatten()
    if not np.all(np.isfinite(g)):
        raise NumericError("Non-finite representation gradient")
    return RepresentationParams.unflatten(params.flatten() - lr1 * g, params.N, params.M)


def flat_loss_fn(params: RepresentationParams, prov: StateProvenance, net: QNetwork,
                 per_action_reward: np.ndarray, tau: float) -> Callable[[np.ndarray], float]:
    """Surrogate loss as a function of the flat parameter vector"""
    N, M = params.N, params.M

    def fn(flat: np.ndarray) -> float:
        return surrogate_loss(RepresentationParams.unflatten(flat, N, M), prov, net,
                              per_action_reward, tau)
    return fn


# ============================================
# FINITE-DIFFERENCE CHECK
# ============================================


@dataclass(frozen=True, eq=False)
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    numeric: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def numeric_gradient(loss_fn: Callable[[np.ndarray], float], x: np.ndarray,
                     step: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn at x"""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        plus = loss_fn(x)
        x.flat[i] = orig - step
        minus = loss_fn(x)
        x.flat[i] = orig
        grad.flat[i] = (plus - minus) / (2.0 * step)
    return grad


def grad_check(loss_fn: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
               tolerance: float = 1e-4, step: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """
    Compare an analytic gradient against central differences

    Relative error per entry is |a - n| / max(|a| + |n|, floor).
    """
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = numeric_gradient(loss_fn, x, step).ravel()
    if analytic.shape != numeric.shape:
        raise ShapeError(f"Analytic gradient has {analytic.size} entries, expected {numeric.size}")
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    max_err = float(rel[worst]) if rel.size else 0.0
    return GradCheckReport(max_err, worst, numeric, tolerance)
