"""
Synthetic Mobility Worlds
Desk-scale stand-in for the check-in and taxi corpora: POIs on a zone grid,
per-user Markov visit chains, and taxi flows that follow visit density
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

from corpus.mobility_data import (SECONDS_PER_WINDOW, CheckinEvent,
                                  EventSequence, KGSchema, PoiCatalog,
                                  PoiInfo, TaxiRecord, TripEnd, ZoneGrid,
                                  build_schema)
from services.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

CATEGORY_VOCABULARY = (
    "coffee shop", "art museum", "sports bar", "train station",
    "pizza place", "history museum", "wine bar", "bus station",
    "book shop", "city park", "noodle house", "gym studio",
)

# Midtown Manhattan
DEFAULT_BBOX = (40.70, -74.02, 40.80, -73.93)
DEFAULT_START = 1333468800  # 2012-04-03 16:00:00 UTC


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """
    Shape of a synthetic world

    preferences is a (users x pois x pois) array; row p of user u is the
    distribution of the POI u visits after p.
    """
    n_users: int
    n_pois: int
    n_categories: int
    n_events: int
    preferences: np.ndarray
    grid_rows: int = 2
    grid_cols: int = 2
    bbox: Tuple[float, float, float, float] = DEFAULT_BBOX
    start_timestamp: int = DEFAULT_START
    trips_per_visit: int = 4
    background_trips: int = 2

    def validate(self):
        if self.n_users < 1 or self.n_pois < 1 or self.n_categories < 1:
            raise ConfigurationError("Synthetic world needs at least one user, POI and category")
        if self.n_pois < self.n_categories:
            raise ConfigurationError(
                f"{self.n_pois} POIs cannot cover {self.n_categories} categories")
        if self.grid_rows * self.grid_cols < 1:
            raise ConfigurationError("Synthetic grid needs at least one zone")
        if self.n_events < 0:
            raise ConfigurationError("Event count must be non-negative")
        expected = (self.n_users, self.n_pois, self.n_pois)
        if self.preferences.shape != expected:
            raise ConfigurationError(
                f"Preference array has shape {self.preferences.shape}, expected {expected}")
        if not np.allclose(self.preferences.sum(axis=2), 1.0) or (self.preferences < 0).any():
            raise ConfigurationError("Preference rows must be probability distributions")
        if self.start_timestamp % SECONDS_PER_WINDOW:
            raise ConfigurationError("start_timestamp must fall on a window boundary")


class SyntheticWorld(NamedTuple):
    events: EventSequence
    taxis: List[TaxiRecord]
    schema: KGSchema
    catalog: PoiCatalog
    grid: ZoneGrid


def category_name(index: int) -> str:
    if index < len(CATEGORY_VOCABULARY):
        return CATEGORY_VOCABULARY[index]
    return f"venue type {index}"


def make_preferences(n_users: int, n_pois: int, concentration: float = 0.9,
                     seed: int = 0) -> np.ndarray:
    """
    Near-deterministic visit chains: each user walks a private random cycle
    over the POIs, taking the next POI of the cycle with probability
    `concentration` and any other POI otherwise
    """
    if not 0.0 <= concentration <= 1.0:
        raise ConfigurationError("concentration must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    prefs = np.zeros((n_users, n_pois, n_pois))
    if n_pois == 1:
        prefs[:] = 1.0
        return prefs
    spread = (1.0 - concentration) / (n_pois - 1)
    for u in range(n_users):
        cycle = rng.permutation(n_pois)
        prefs[u] = spread
        for i, poi in enumerate(cycle):
            prefs[u, poi, cycle[(i + 1) % n_pois]] = concentration
    return prefs


def _point_in(grid: ZoneGrid, zone: int, rng: np.random.Generator) -> Tuple[float, float]:
    lat0, lon0, lat1, lon1 = grid.cell_bounds(zone)
    # Keep clear of cell edges so float rounding never moves a point across zones
    lat = lat0 + (lat1 - lat0) * (0.05 + 0.9 * rng.random())
    lon = lon0 + (lon1 - lon0) * (0.05 + 0.9 * rng.random())
    return float(lat), float(lon)


def generate_synthetic(spec: SynthSpec, seed: int) -> SyntheticWorld:
    """
    Build a synthetic world; a pure function of (spec, seed)

    POI j belongs to category j mod C and lies in zone j mod M. Each event
    occupies its own one-hour window; the acting user is drawn uniformly and
    moves along its preference chain. Each visit emits `trips_per_visit` taxi
    trips ending in the visited zone, plus `background_trips` random trips.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    grid = ZoneGrid(*spec.bbox, rows=spec.grid_rows, cols=spec.grid_cols)

    pois = []
    for j in range(spec.n_pois):
        lat, lon = _point_in(grid, j % grid.M, rng)
        cat = j % spec.n_categories
        pois.append(PoiInfo(f"p{j:03d}", f"c{cat}", category_name(cat), lat, lon))
    catalog = PoiCatalog(tuple(pois))
    schema = build_schema(catalog, grid)

    position = rng.integers(spec.n_pois, size=spec.n_users)
    started = np.zeros(spec.n_users, dtype=bool)
    events: List[CheckinEvent] = []
    visited_zones: List[int] = []
    for k in range(spec.n_events):
        user = int(rng.integers(spec.n_users))
        if started[user]:
            position[user] = rng.choice(spec.n_pois, p=spec.preferences[user, position[user]])
        started[user] = True
        poi = pois[position[user]]
        timestamp = spec.start_timestamp + k * SECONDS_PER_WINDOW + int(rng.integers(0, 3000))
        events.append(CheckinEvent(f"u{user}", poi.poi_id, poi.category_id, poi.category_name,
                                   poi.lat, poi.lon, timestamp))
        visited_zones.append(int(position[user]) % grid.M)

    taxis: List[TaxiRecord] = []
    for k, zone in enumerate(visited_zones):
        window = spec.start_timestamp + k * SECONDS_PER_WINDOW
        ends = [(int(rng.integers(grid.M)), zone) for _ in range(spec.trips_per_visit)]
        ends += [(int(rng.integers(grid.M)), int(rng.integers(grid.M)))
                 for _ in range(spec.background_trips)]
        for origin, target in ends:
            pickup_time = window + int(rng.integers(0, 2600))
            dropoff_time = pickup_time + int(rng.integers(60, 900))
            taxis.append(TaxiRecord(f"t{len(taxis)}",
                                    TripEnd(*_point_in(grid, origin, rng), pickup_time),
                                    TripEnd(*_point_in(grid, target, rng), dropoff_time)))

    logger.info(f"Generated synthetic world: {spec.n_users} users, {spec.n_pois} POIs, "
                f"{len(events)} events, {len(taxis)} taxi trips")
    return SyntheticWorld(EventSequence(tuple(events)), taxis, schema, catalog, grid)
