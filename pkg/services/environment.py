"""
Mobility Environment
Everything the agent interacts with: profiles, the spatial KG, representation
parameters, temporal contexts, reward tables and baseline windows
"""

import copy
import logging
import operator
from dataclasses import dataclass
from typing import Dict, NamedTuple, Sequence, Tuple

import numpy as np
from cachetools import LRUCache, cachedmethod

from corpus.mobility_data import (CheckinEvent, KGSchema, PoiCatalog,
                                  TemporalContextIndex)
from services.exceptions import LookupFailure, ShapeError
from services.geo import haversine_km_vectorized
from services.representation import (HeadRecord, RepresentationParams,
                                     StateProvenance, VisitRecord)
from services.reward import (BaselineWindows, CategoryVectors, RewardConfig,
                             composite_reward)
from services.spatial_kg import (KGState, apply_kg_step, check_params,
                                 init_kg, sibling_paths, update_visited_poi)
from services.user_state import (ProfileTable, StateVector, UserProfile,
                                 assemble_state, init_users, last_head,
                                 temporal_transform, update_user_profile,
                                 user_update)

logger = logging.getLogger(__name__)


class RewardTables:
    """
    Per-action reward components against one real POI

    Category similarities are a (C x C) matrix over the distinct category
    names; distance rows are computed on demand and memoised.
    """

    def __init__(self, catalog: PoiCatalog, vectors: CategoryVectors,
                 distance_floor: float, cache_size: int = 1024):
        self.catalog = catalog
        self.distance_floor = distance_floor
        names = sorted(set(catalog.category_names))
        position = {name: i for i, name in enumerate(names)}
        self.category_index = np.array([position[n] for n in catalog.category_names], dtype=int)
        self.category_similarity = np.array([[vectors.similarity(a, b) for b in names]
                                             for a in names]).reshape(len(names), len(names))
        self._action = {p.poi_id: i for i, p in enumerate(catalog.pois)}
        self._cache = LRUCache(maxsize=cache_size)

    def action_of(self, poi: str) -> int:
        try:
            return self._action[poi]
        except KeyError:
            raise LookupFailure(f"Unknown POI {poi}") from None

    @cachedmethod(operator.attrgetter("_cache"))
    def distance_row(self, poi: str) -> np.ndarray:
        """Haversine km from poi to every catalog POI"""
        info = self.catalog.pois[self.action_of(poi)]
        row = haversine_km_vectorized((info.lat, info.lon), self.catalog.coordinates)
        row.flags.writeable = False
        return row

    def components(self, real_poi: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(r_d, r_c, r_p) for every candidate action"""
        real = self.action_of(real_poi)
        r_d = 1.0 / (self.distance_row(real_poi) + self.distance_floor)
        r_c = self.category_similarity[self.category_index, self.category_index[real]]
        r_p = np.zeros(len(self.catalog))
        r_p[real] = 1.0
        return r_d, r_c, r_p


class Observation(NamedTuple):
    T: np.ndarray
    context: np.ndarray
    state: StateVector
    provenance: StateProvenance


@dataclass
class MobilityEnvironment:
    schema: KGSchema
    catalog: PoiCatalog
    profiles: ProfileTable
    kg: KGState
    params: RepresentationParams
    temporal: TemporalContextIndex
    tables: RewardTables
    reward_cfg: RewardConfig
    windows: BaselineWindows
    pooling: bool = False
    tail_sigmoid: bool = False

    def __post_init__(self):
        self.user_records: Dict[str, VisitRecord] = {}
        self.head_records: Dict[str, HeadRecord] = {}

    @classmethod
    def create(cls, schema: KGSchema, catalog: PoiCatalog, user_ids: Sequence[str],
               temporal: TemporalContextIndex, vectors: CategoryVectors, reward_cfg: RewardConfig,
               dim: int, seed: int, pooling: bool = False,
               tail_sigmoid: bool = False) -> "MobilityEnvironment":
        """Fresh environment; users, KG and parameters seeded from seed, seed+1, seed+2"""
        return cls(schema=schema, catalog=catalog,
                   profiles=init_users(user_ids, dim, seed),
                   kg=init_kg(schema, dim, seed + 1),
                   params=RepresentationParams.init(dim, temporal.M, seed + 2),
                   temporal=temporal,
                   tables=RewardTables(catalog, vectors, reward_cfg.distance_floor),
                   reward_cfg=reward_cfg,
                   windows=BaselineWindows(reward_cfg.window),
                   pooling=pooling, tail_sigmoid=tail_sigmoid)

    @classmethod
    def restore(cls, schema: KGSchema, catalog: PoiCatalog, profiles: ProfileTable, kg: KGState,
                params: RepresentationParams, temporal: TemporalContextIndex,
                vectors: CategoryVectors, reward_cfg: RewardConfig, pooling: bool = False,
                tail_sigmoid: bool = False) -> "MobilityEnvironment":
        """
        Environment around saved state; baseline windows start empty

        Raises:
            ShapeError: profiles, KG and parameters disagree on N or M
            ConfigurationError: a parameter vector has non-finite entries
        """
        check_params(params.kg, kg.dim)
        if params.N != kg.dim or params.M != temporal.M:
            raise ShapeError(f"Parameters are sized N={params.N}, M={params.M}; "
                             f"KG has N={kg.dim} and the corpus M={temporal.M}")
        for uid, profile in profiles.items():
            if profile.u.shape != (kg.dim,):
                raise ShapeError(f"Profile {uid} has shape {profile.u.shape}, expected ({kg.dim},)")
        return cls(schema=schema, catalog=catalog, profiles=profiles, kg=kg, params=params,
                   temporal=temporal,
                   tables=RewardTables(catalog, vectors, reward_cfg.distance_floor),
                   reward_cfg=reward_cfg, windows=BaselineWindows(reward_cfg.window),
                   pooling=pooling, tail_sigmoid=tail_sigmoid)

    @property
    def n_actions(self) -> int:
        return len(self.schema.pois)

    @property
    def state_dim(self) -> int:
        return 3 * self.kg.dim

    def knows(self, event: CheckinEvent) -> bool:
        return event.user_id in self.profiles and event.poi_id in self.schema.action_index

    def profile(self, user_id: str) -> UserProfile:
        try:
            return self.profiles[user_id]
        except KeyError:
            raise LookupFailure(f"Unknown user {user_id}") from None

    # ============================================
    # OBSERVATION
    # ============================================

    def provenance(self, profile: UserProfile, T: np.ndarray) -> StateProvenance:
        head_record = None
        if not self.pooling and profile.last_poi is not None:
            head_record = self.head_records.get(profile.last_poi)
        return StateProvenance(T=T,
                               user_record=self.user_records.get(profile.user_id),
                               u_const=profile.u,
                               head_record=head_record,
                               h_const=last_head(profile, self.kg, self.pooling))

    def observe(self, event: CheckinEvent) -> Observation:
        """State of the acting user at the time of event"""
        profile = self.profile(event.user_id)
        T = self.temporal.matrix_at(event.timestamp)
        context = temporal_transform(self.params.user, T)
        state = assemble_state(profile, self.kg, context, self.pooling)
        return Observation(T, context, state, self.provenance(profile, T))

    def reward_components(self, event: CheckinEvent):
        return self.tables.components(event.poi_id)

    def per_action_rewards(self, event: CheckinEvent) -> np.ndarray:
        """Composite reward of every action against the current baselines"""
        return composite_reward(self.reward_cfg, self.windows.baselines(),
                                *self.reward_components(event))

    def preview_next(self, event: CheckinEvent, obs: Observation) -> np.ndarray:
        """s' = concat(u', h'[visited POI], T~) under the current parameters, nothing committed"""
        profile = self.profile(event.user_id)
        h_old = self.kg.head(event.poi_id)
        new_u, _ = user_update(profile.u, self.params.user, h_old, obs.context)
        if self.pooling:
            shadow = self.kg.copy()
            apply_kg_step(shadow, self.params.kg, event.poi_id, profile.u, obs.context,
                          self.tail_sigmoid)
            middle = shadow.mean_head()
        else:
            middle = update_visited_poi(self.kg, self.params.kg, event.poi_id, profile.u,
                                        obs.context)
        return np.concatenate([new_u, middle, obs.context])

    # ============================================
    # COMMIT
    # ============================================

    def commit(self, event: CheckinEvent, T: np.ndarray):
        """Apply the user and KG updates of a real visit with the current parameters"""
        profile = self.profile(event.user_id)
        poi = event.poi_id
        context = temporal_transform(self.params.user, T)
        u_old = profile.u
        h_old = self.kg.head(poi)
        tails_old = {key[0]: self.kg.tails[key] for key in self.kg.tail_keys(poi)}
        heads_before = dict(self.kg.heads)

        step = apply_kg_step(self.kg, self.params.kg, poi, u_old, context, self.tail_sigmoid)
        update_user_profile(profile, self.params.user, h_old, context, poi)

        visit = VisitRecord(profile.user_id, poi, u_old, h_old, T)
        self.user_records[profile.user_id] = visit
        self.head_records[poi] = HeadRecord("visit", visit)
        relations = dict(self.kg.relations)
        for sib in sorted(step.sibling_heads):
            self.head_records[sib] = HeadRecord(
                "sibling", visit, h_old=heads_before[sib],
                paths=tuple(sibling_paths(self.schema, poi, sib)),
                tails_old=tails_old, relations=relations, tail_sigmoid=self.tail_sigmoid)
        return step

    def copy(self) -> "MobilityEnvironment":
        return copy.deepcopy(self)
