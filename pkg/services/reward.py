"""
Reward Service
Distance, category and exact-match rewards, sliding-window baselines
and the baseline-corrected composite reward
"""

import hashlib
import logging
import operator
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, Mapping, Tuple, Union

import numpy as np
from cachetools import LRUCache, cachedmethod

from services.exceptions import ConfigurationError, ShapeError
from services.geo import haversine_km
from services.gating import sigmoid

logger = logging.getLogger(__name__)

DEFAULT_DISTANCE_FLOOR_KM = 0.1

# Composite rewards stay strictly inside (0, 1) even when the logit saturates
REWARD_EPS = 1e-12

# ============================================
# DATA CLASSES
# ============================================


@dataclass(frozen=True)
class RewardConfig:
    """Component weights, baseline window size and the distance floor (km)"""
    ld: float = 0.2
    lc: float = 0.6
    lp: float = 0.2
    window: int = 5
    distance_floor: float = DEFAULT_DISTANCE_FLOOR_KM

    def __post_init__(self):
        if min(self.ld, self.lc, self.lp) < 0:
            raise ConfigurationError("Reward weights must be non-negative")
        if self.ld + self.lc + self.lp <= 0:
            raise ConfigurationError("At least one reward weight must be positive")
        if self.window < 1:
            raise ConfigurationError(f"Baseline window must be >= 1, got {self.window}")
        if self.distance_floor <= 0:
            raise ConfigurationError("Distance floor must be positive")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.ld, self.lc, self.lp])


@dataclass(frozen=True)
class RewardBreakdown:
    r_d: float
    r_c: float
    r_p: float
    b_d: float
    b_c: float
    b_p: float
    r: float


class BaselineWindows:
    """Three bounded FIFO windows of past r_d, r_c, r_p values"""

    def __init__(self, size: int):
        if size < 1:
            raise ConfigurationError(f"Baseline window must be >= 1, got {size}")
        self.size = size
        self._windows: Tuple[Deque[float], ...] = tuple(deque(maxlen=size) for _ in range(3))

    def baselines(self) -> Tuple[float, float, float]:
        """Mean of each window; 0 for an empty window"""
        return tuple(float(np.mean(w)) if w else 0.0 for w in self._windows)

    def push(self, r_d: float, r_c: float, r_p: float):
        for window, value in zip(self._windows, (r_d, r_c, r_p)):
            window.append(float(value))

    def contents(self) -> Tuple[Tuple[float, ...], ...]:
        return tuple(tuple(w) for w in self._windows)

    def __len__(self) -> int:
        return len(self._windows[0])


# ============================================
# CATEGORY VECTORS
# ============================================


class CategoryVectors:
    """
    Word-vector table; a category name embeds as the mean of the vectors of
    its lowercased whitespace tokens, out-of-vocabulary tokens ignored
    """

    def __init__(self, table: Mapping[str, np.ndarray], dim: int, cache_size: int = 4096):
        for token, vec in table.items():
            if np.shape(vec) != (dim,):
                raise ShapeError(f"Vector for {token!r} has shape {np.shape(vec)}, expected ({dim},)")
        self.table: Dict[str, np.ndarray] = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.dim = dim
        self._cache = LRUCache(maxsize=cache_size)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "CategoryVectors":
        """Load a 'token f1 ... fD' text file"""
        table: Dict[str, np.ndarray] = {}
        dim = None
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except UnicodeDecodeError as e:
            raise ConfigurationError(f"Word-vector file {path} is not UTF-8: {e}") from e
        for line_no, line in enumerate(lines, start=1):
            parts = line.rstrip().split()
            if not parts:
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError as e:
                raise ConfigurationError(f"{path}:{line_no}: {e}") from e
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ShapeError(f"{path}:{line_no}: expected {dim} floats, got {vec.shape[0]}")
            table[parts[0].lower()] = vec
        if dim is None:
            raise ConfigurationError(f"Word-vector file {path} is empty")
        logger.info(f"Loaded {len(table)} word vectors of dimension {dim} from {path}")
        return cls(table, dim)

    def token_vector(self, token: str):
        return self.table.get(token)

    @cachedmethod(operator.attrgetter("_cache"))
    def embed(self, name: str) -> np.ndarray:
        vectors = [v for v in (self.token_vector(t) for t in name.lower().split()) if v is not None]
        if not vectors:
            return np.zeros(self.dim)
        out = np.mean(vectors, axis=0)
        out.flags.writeable = False
        return out

    def similarity(self, a: str, b: str) -> float:
        return cosine(self.embed(a), self.embed(b))


class HashedCategoryVectors(CategoryVectors):
    """Every token gets a fixed pseudo-random vector derived from sha256(seed:token)"""

    def __init__(self, dim: int = 50, seed: int = 0, cache_size: int = 4096):
        super().__init__({}, dim, cache_size)
        self.seed = seed

    def token_vector(self, token: str):
        if token not in self.table:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            self.table[token] = rng.standard_normal(self.dim)
        return self.table[token]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ============================================
# REWARD COMPONENTS
# ============================================


def distance_reward(pred, real, distance_floor: float = DEFAULT_DISTANCE_FLOOR_KM) -> float:
    """r_d = 1 / (haversine_km(pred, real) + floor)"""
    return 1.0 / (haversine_km(pred, real) + distance_floor)


def category_reward(pred_name: str, real_name: str, vectors: CategoryVectors) -> float:
    """Cosine of the two category embeddings; 0 when either is all out-of-vocabulary"""
    return vectors.similarity(pred_name, real_name)


def exact_reward(pred_poi: str, real_poi: str) -> float:
    return 1.0 if pred_poi == real_poi else 0.0


def composite_reward(cfg: RewardConfig, baselines: Tuple[float, float, float],
                     r_d, r_c, r_p):
    """sigmoid(ld (r_d - b_d) + lc (r_c - b_c) + lp (r_p - b_p)); broadcasts over arrays"""
    b_d, b_c, b_p = baselines
    r = sigmoid(cfg.ld * (np.asarray(r_d) - b_d) + cfg.lc * (np.asarray(r_c) - b_c)
                + cfg.lp * (np.asarray(r_p) - b_p))
    return np.clip(r, REWARD_EPS, 1.0 - REWARD_EPS)


def compute_reward(cfg: RewardConfig, windows: BaselineWindows, r_d: float, r_c: float,
                   r_p: float) -> RewardBreakdown:
    """Composite reward against the current baselines, then push the components"""
    b_d, b_c, b_p = windows.baselines()
    r = float(composite_reward(cfg, (b_d, b_c, b_p), r_d, r_c, r_p))
    windows.push(r_d, r_c, r_p)
    return RewardBreakdown(float(r_d), float(r_c), float(r_p), b_d, b_c, b_p, r)
