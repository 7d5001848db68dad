"""
User State
User profiles, the temporal transform of a traffic matrix, the gated user
update and assembly of the per-decision state vector
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from services.exceptions import ConfigurationError, ShapeError
from services.gating import (InteractionCache, check_dims, interaction_update,
                             sigmoid)
from services.spatial_kg import KGState

logger = logging.getLogger(__name__)


@dataclass
class UserProfile:
    """Learned embedding of one user plus update bookkeeping"""
    user_id: str
    u: np.ndarray
    last_poi: Optional[str] = None
    step: int = 0


ProfileTable = Dict[str, UserProfile]


@dataclass
class UserUpdateParams:
    """Weights of the user update and of the temporal transform"""
    W_u: np.ndarray
    W_au: np.ndarray
    b_au: float
    W_T1: np.ndarray
    W_T2: np.ndarray
    b_T: np.ndarray

    @property
    def N(self) -> int:
        return self.W_u.shape[0]

    @property
    def M(self) -> int:
        return self.W_T1.shape[1]

    @classmethod
    def zeros(cls, N: int, M: int) -> "UserUpdateParams":
        return cls(np.zeros(N), np.zeros(N), 0.0, np.zeros((N, M)), np.zeros(3), np.zeros(N))


@dataclass(frozen=True, eq=False)
class StateVector:
    """s = concat(u, h_last_poi, T~), tagged with the profile step it was built at"""
    s: np.ndarray
    step: int

    @property
    def dim(self) -> int:
        return self.s.shape[0]


# ============================================
# TEMPORAL TRANSFORM
# ============================================


@dataclass(frozen=True, eq=False)
class TemporalCache:
    T: np.ndarray
    pooled: np.ndarray
    out: np.ndarray


def temporal_forward(params: UserUpdateParams, T: np.ndarray) -> Tuple[np.ndarray, TemporalCache]:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[1] != 3:
        raise ShapeError(f"Traffic matrix must be M x 3, got shape {T.shape}")
    if T.shape[0] != params.W_T1.shape[1]:
        raise ShapeError(f"Traffic matrix has {T.shape[0]} zones, W_T1 expects {params.W_T1.shape[1]}")
    pooled = T @ params.W_T2
    out = sigmoid(params.W_T1 @ pooled + params.b_T)
    return out, TemporalCache(T, pooled, out)


def temporal_transform(params: UserUpdateParams, T: np.ndarray) -> np.ndarray:
    """T~ = sigmoid(W_T1 . T . W_T2 + b_T), a vector in (0, 1)^N"""
    return temporal_forward(params, T)[0]


def temporal_backward(d_out: np.ndarray, cache: TemporalCache,
                      params: UserUpdateParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_W_T1, d_W_T2, d_b_T)"""
    d_pre = d_out * cache.out * (1.0 - cache.out)
    d_W_T1 = np.outer(d_pre, cache.pooled)
    d_W_T2 = cache.T.T @ (params.W_T1.T @ d_pre)
    return d_W_T1, d_W_T2, d_pre


# ============================================
# USER UPDATE
# ============================================


def user_update(u: np.ndarray, params: UserUpdateParams, h_poi: np.ndarray,
                context: np.ndarray) -> Tuple[np.ndarray, InteractionCache]:
    """Pure form of the gated user update; returns (new u, backward cache)"""
    check_dims(u, h_poi, context, dim=params.N)
    return interaction_update(u, h_poi, context, params.W_u, params.W_au, params.b_au)


def update_user_profile(profile: UserProfile, params: UserUpdateParams, h_poi: np.ndarray,
                        context: np.ndarray, poi: Optional[str] = None) -> np.ndarray:
    """
    Apply the gated user update for one visit and return the new u

    The profile's vector is replaced, not edited, so references to the old
    vector stay valid. step is incremented and last_poi set to poi.
    """
    if profile.u.shape != (params.N,):
        raise ShapeError(f"Profile {profile.user_id} has shape {profile.u.shape}, expected ({params.N},)")
    new_u, _ = user_update(profile.u, params, h_poi, context)
    profile.u = new_u
    profile.step += 1
    if poi is not None:
        profile.last_poi = poi
    return new_u


def last_head(profile: UserProfile, kg: KGState, pooling: bool = False) -> np.ndarray:
    """Middle slot of the state: head of the last POI, zeros on cold start"""
    if pooling:
        return kg.mean_head()
    if profile.last_poi is None:
        return np.zeros(kg.dim)
    return kg.head(profile.last_poi)


def assemble_state(profile: UserProfile, kg: KGState, context: np.ndarray,
                   pooling: bool = False) -> StateVector:
    """s = concat(u, h[last_poi], T~), dimension 3N"""
    check_dims(profile.u, context, dim=kg.dim)
    s = np.concatenate([profile.u, last_head(profile, kg, pooling), context])
    return StateVector(s, profile.step)


def init_users(user_ids: Iterable[str], N: int, seed: int) -> ProfileTable:
    """Profiles drawn uniformly from [-0.5/N, 0.5/N] in sorted id order"""
    ids = sorted(set(user_ids))
    if not ids:
        raise ConfigurationError("Cannot initialise profiles for an empty user set")
    if N < 1:
        raise ConfigurationError(f"Embedding dimension must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    bound = 0.5 / N
    table = {uid: UserProfile(uid, rng.uniform(-bound, bound, N)) for uid in ids}
    logger.info(f"Initialised {len(table)} user profiles, N={N}")
    return table
