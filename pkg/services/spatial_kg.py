"""
Spatial Knowledge Graph
Head (POI), tail (category / zone) and relation embeddings with the gated
incremental updates triggered by a visit event
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Tuple

import numpy as np

from corpus.mobility_data import KGSchema
from services.exceptions import (ConfigurationError, LookupFailure,
                                 SchemaError, ShapeError)
from services.gating import (check_dims, gate_coefficient, gated_blend,
                             interaction_update)

logger = logging.getLogger(__name__)


class Relation(Enum):
    """The two relation kinds of the spatial KG"""
    BELONGS_TO = "belong_to"
    LOCATES_AT = "locate_at"


TailKey = Tuple[Relation, str]

# ============================================
# DATA CLASSES
# ============================================


@dataclass
class KGUpdateParams:
    """Weights of the visited-POI, tail and sibling updates"""
    W_p: np.ndarray
    W_ap: np.ndarray
    b_ap: float
    W_at: np.ndarray
    b_at: float
    W_ah: np.ndarray
    b_ah: float

    @classmethod
    def zeros(cls, N: int) -> "KGUpdateParams":
        return cls(np.zeros(N), np.zeros(N), 0.0, np.zeros(N), 0.0, np.zeros(N), 0.0)


@dataclass
class KGState:
    """
    Embeddings of a KGSchema

    tails are keyed by (relation, entity id) since category and zone ids
    live in separate namespaces. Vectors are replaced, never edited in
    place, so earlier references stay valid as snapshots.
    """
    schema: KGSchema
    dim: int
    heads: Dict[str, np.ndarray]
    tails: Dict[TailKey, np.ndarray]
    relations: Dict[Relation, np.ndarray]

    def head(self, poi: str) -> np.ndarray:
        try:
            return self.heads[poi]
        except KeyError:
            raise LookupFailure(f"Unknown POI {poi}") from None

    def tail_keys(self, poi: str) -> Tuple[TailKey, TailKey]:
        """(category key, zone key) linked to poi"""
        try:
            return ((Relation.BELONGS_TO, self.schema.belongs_to[poi]),
                    (Relation.LOCATES_AT, self.schema.locates_at[poi]))
        except KeyError:
            raise SchemaError(f"POI {poi} has no schema links") from None

    def copy(self) -> "KGState":
        return KGState(self.schema, self.dim, dict(self.heads), dict(self.tails),
                       dict(self.relations))

    def mean_head(self) -> np.ndarray:
        return np.mean(np.stack([self.heads[p] for p in self.schema.pois]), axis=0)


@dataclass
class KGStepResult:
    """What one visit changed in the graph"""
    poi: str
    new_head: np.ndarray
    new_tails: Dict[TailKey, np.ndarray]
    sibling_heads: Dict[str, np.ndarray] = field(default_factory=dict)

    def changed_heads(self) -> FrozenSet[str]:
        return frozenset([self.poi, *self.sibling_heads])


# ============================================
# OPERATIONS
# ============================================


def init_kg(schema: KGSchema, N: int, seed: int) -> KGState:
    """Embeddings drawn uniformly from [-0.5/N, 0.5/N], deterministic per seed"""
    if N < 1:
        raise ConfigurationError(f"Embedding dimension must be >= 1, got {N}")
    if schema.is_empty:
        raise ConfigurationError("Cannot initialise a knowledge graph over an empty schema")
    rng = np.random.default_rng(seed)
    bound = 0.5 / N

    def draw() -> np.ndarray:
        return rng.uniform(-bound, bound, N)

    heads = {poi: draw() for poi in schema.pois}
    tails: Dict[TailKey, np.ndarray] = {}
    for cat in schema.categories:
        tails[(Relation.BELONGS_TO, cat)] = draw()
    for zone in schema.zones:
        tails[(Relation.LOCATES_AT, zone)] = draw()
    relations = {rel: draw() for rel in Relation}
    logger.info(f"Initialised KG: {len(heads)} heads, {len(tails)} tails, N={N}")
    return KGState(schema, N, heads, tails, relations)


def update_visited_poi(kg: KGState, params: KGUpdateParams, poi: str, u: np.ndarray,
                       context: np.ndarray) -> np.ndarray:
    """New head of the visited POI from its old head, the visitor and T~"""
    h_old = kg.head(poi)
    check_dims(u, context, dim=kg.dim)
    new_head, _ = interaction_update(h_old, u, context, params.W_p, params.W_ap, params.b_ap)
    return new_head


def update_tails(kg: KGState, params: KGUpdateParams, poi: str, new_head: np.ndarray,
                 tail_sigmoid: bool = False) -> Dict[TailKey, np.ndarray]:
    """
    New category and zone tails of poi

    Each tail moves toward new_head + rel; the blend has no outer sigmoid
    unless tail_sigmoid is set.
    """
    check_dims(new_head, dim=kg.dim)
    updated = {}
    for key in kg.tail_keys(poi):
        if key not in kg.tails:
            raise SchemaError(f"Tail {key[1]} of POI {poi} has no embedding")
        rel = kg.relations[key[0]]
        updated[key], _ = gated_blend(kg.tails[key], new_head + rel, params.W_at, params.b_at,
                                      squash=tail_sigmoid)
    return updated


def siblings(schema: KGSchema, poi: str) -> FrozenSet[str]:
    """POIs other than poi that share its category or its zone"""
    if poi not in schema.belongs_to:
        raise LookupFailure(f"Unknown POI {poi}")
    shared = set(schema.pois_by_category[schema.belongs_to[poi]])
    shared.update(schema.pois_by_zone[schema.locates_at[poi]])
    shared.discard(poi)
    return frozenset(shared)


def sibling_paths(schema: KGSchema, poi: str, sibling: str) -> List[Relation]:
    """Shared links between poi and sibling, category first"""
    paths = []
    if schema.belongs_to[sibling] == schema.belongs_to[poi]:
        paths.append(Relation.BELONGS_TO)
    if schema.locates_at[sibling] == schema.locates_at[poi]:
        paths.append(Relation.LOCATES_AT)
    return paths


def update_sibling_pois(kg: KGState, params: KGUpdateParams, poi: str) -> Dict[str, np.ndarray]:
    """
    New heads of every sibling of poi, read back from the already-updated tails

    A sibling sharing both tails is updated along the category path and then
    along the zone path.
    """
    category_key, zone_key = kg.tail_keys(poi)
    path_keys = {Relation.BELONGS_TO: category_key, Relation.LOCATES_AT: zone_key}
    updated = {}
    for sib in sorted(siblings(kg.schema, poi)):
        head = kg.head(sib)
        for relation in sibling_paths(kg.schema, poi, sib):
            rel = kg.relations[relation]
            head, _ = gated_blend(head, kg.tails[path_keys[relation]] - rel,
                                  params.W_ah, params.b_ah, squash=True)
        updated[sib] = head
    return updated


def apply_kg_step(kg: KGState, params: KGUpdateParams, poi: str, u: np.ndarray,
                  context: np.ndarray, tail_sigmoid: bool = False) -> KGStepResult:
    """
    Full graph update for one visit, committed into kg in order:
    visited head, then its two tails, then the sibling heads
    """
    new_head = update_visited_poi(kg, params, poi, u, context)
    new_tails = update_tails(kg, params, poi, new_head, tail_sigmoid)
    kg.heads[poi] = new_head
    kg.tails.update(new_tails)
    sibling_heads = update_sibling_pois(kg, params, poi)
    kg.heads.update(sibling_heads)
    return KGStepResult(poi, new_head, new_tails, sibling_heads)


def check_params(params: KGUpdateParams, N: int):
    for name in ("W_p", "W_ap", "W_at", "W_ah"):
        value = getattr(params, name)
        if value.shape != (N,):
            raise ShapeError(f"{name} has shape {value.shape}, expected ({N},)")
        if not np.all(np.isfinite(value)):
            raise ConfigurationError(f"{name} has non-finite entries")


__all__ = [
    "Relation", "KGUpdateParams", "KGState", "KGStepResult", "init_kg", "gate_coefficient",
    "update_visited_poi", "update_tails", "siblings", "sibling_paths", "update_sibling_pois",
    "apply_kg_step", "check_params",
]
