"""
Mobility Data Layer
Check-in and taxi ingestion, temporal contexts, chronological splits,
and the POI catalog / knowledge-graph schema derived from a corpus
"""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import (IO, Dict, Iterable, Iterator, List, Mapping,
                    Optional, Sequence, Tuple, Union)

import numpy as np
import pytz
from dateutil import parser as date_parser

from services.exceptions import (ConfigurationError, DomainError,
                                 EmptyCorpusError, SchemaError,
                                 TooFewEventsError)

logger = logging.getLogger(__name__)

SECONDS_PER_WINDOW = 3600

Source = Union[str, os.PathLike, bytes, IO[bytes]]

# ============================================
# DATA CLASSES
# ============================================


@dataclass(frozen=True)
class CheckinEvent:
    """One timestamped user-visits-POI event"""
    user_id: str
    poi_id: str
    category_id: str
    category_name: str
    lat: float
    lon: float
    timestamp: int

    def __post_init__(self):
        _check_coordinates(self.lat, self.lon)
        if not self.category_name.strip():
            raise DomainError(f"Empty category name for POI {self.poi_id}")


@dataclass(frozen=True)
class TripEnd:
    """Pick-up or drop-off point of a taxi trip"""
    lat: float
    lon: float
    timestamp: int


@dataclass(frozen=True)
class TaxiRecord:
    """One taxi order"""
    id: str
    pickup: TripEnd
    dropoff: TripEnd

    def __post_init__(self):
        _check_coordinates(self.pickup.lat, self.pickup.lon)
        _check_coordinates(self.dropoff.lat, self.dropoff.lon)
        if self.dropoff.timestamp < self.pickup.timestamp:
            raise DomainError(f"Trip {self.id} drops off before it picks up")


@dataclass(frozen=True)
class ZoneGrid:
    """
    Uniform lat/lon rectangle grid over a city; zone index = row * cols + col

    The north and east edges of the box are inclusive so that every coordinate
    inside the box maps to exactly one zone.
    """
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ConfigurationError("Grid rows/cols must be non-negative")
        if not (self.min_lat < self.max_lat and self.min_lon < self.max_lon):
            raise ConfigurationError("Grid bounding box is empty")

    @property
    def M(self) -> int:
        return self.rows * self.cols

    @classmethod
    def covering(cls, points: Iterable[Tuple[float, float]], rows: int, cols: int,
                 margin: float = 1e-6) -> "ZoneGrid":
        """Smallest grid box holding every (lat, lon) point"""
        points = list(points)
        if not points:
            raise ConfigurationError("Cannot build a grid around zero points")
        lats = [p[0] for p in points]
        lons = [p[1] for p in points]
        return cls(min(lats) - margin, min(lons) - margin,
                   max(lats) + margin, max(lons) + margin, rows, cols)

    def zone_of(self, lat: float, lon: float) -> Optional[int]:
        """Zone index of a coordinate, None when outside the box"""
        if self.M == 0:
            return None
        if not (self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon):
            return None
        row = int((lat - self.min_lat) / (self.max_lat - self.min_lat) * self.rows)
        col = int((lon - self.min_lon) / (self.max_lon - self.min_lon) * self.cols)
        return min(row, self.rows - 1) * self.cols + min(col, self.cols - 1)

    def zones_of(self, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        """Vectorised zone_of; -1 marks coordinates outside the box"""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        inside = ((lats >= self.min_lat) & (lats <= self.max_lat)
                  & (lons >= self.min_lon) & (lons <= self.max_lon))
        rows = ((lats - self.min_lat) / (self.max_lat - self.min_lat) * self.rows).astype(int)
        cols = ((lons - self.min_lon) / (self.max_lon - self.min_lon) * self.cols).astype(int)
        zones = np.minimum(rows, self.rows - 1) * self.cols + np.minimum(cols, self.cols - 1)
        return np.where(inside, zones, -1)

    def cell_bounds(self, zone: int) -> Tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon) of one zone"""
        row, col = divmod(zone, self.cols)
        dlat = (self.max_lat - self.min_lat) / self.rows
        dlon = (self.max_lon - self.min_lon) / self.cols
        return (self.min_lat + row * dlat, self.min_lon + col * dlon,
                self.min_lat + (row + 1) * dlat, self.min_lon + (col + 1) * dlon)


@dataclass(frozen=True, eq=False)
class TemporalContext:
    """M x 3 traffic matrix (inner, in-flow, out-flow) for one one-hour window"""
    window_start: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.flags.writeable = False


class TemporalContextIndex:
    """Maps event timestamps to the traffic matrix of their window"""

    def __init__(self, contexts: Sequence[TemporalContext], M: int):
        self.M = M
        self._by_window: Dict[int, np.ndarray] = {c.window_start: c.matrix for c in contexts}
        self._zero = np.zeros((M, 3))
        self._zero.flags.writeable = False

    def __len__(self) -> int:
        return len(self._by_window)

    def matrix_at(self, timestamp: int) -> np.ndarray:
        """Matrix of the window holding timestamp; all-zero when no trips were recorded"""
        return self._by_window.get(window_start(timestamp), self._zero)


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered check-in events"""
    events: Tuple[CheckinEvent, ...] = ()

    def __post_init__(self):
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.timestamp < prev.timestamp:
                raise DomainError("Event timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[CheckinEvent]:
        return iter(self.events)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return EventSequence(self.events[item])
        return self.events[item]

    def concatenate(self, other: "EventSequence") -> "EventSequence":
        return EventSequence(self.events + other.events)

    def user_ids(self) -> List[str]:
        return sorted({e.user_id for e in self.events})


@dataclass
class ParseStats:
    """Row counters filled in by the parsers"""
    rows: int = 0
    kept: int = 0
    skipped: int = 0


# ============================================
# COLUMN MAPS
# ============================================


@dataclass(frozen=True)
class ColumnMap:
    """
    Explicit column layout of a delimiter-separated corpus

    columns maps field names to 0-based column indices. Check-in fields:
    user_id, poi_id, category_id, category_name, lat, lon, timestamp.
    Taxi fields: id, pickup_lat, pickup_lon, pickup_time, dropoff_lat,
    dropoff_lon, dropoff_time. Naive timestamps are read in `timezone`.
    """
    columns: Mapping[str, int]
    delimiter: str = "\t"
    has_header: bool = False
    timezone: str = "UTC"

    def index(self, name: str) -> int:
        return self.columns[name]


CHECKIN_FIELDS = ("user_id", "poi_id", "category_id", "category_name", "lat", "lon", "timestamp")
TAXI_FIELDS = ("id", "pickup_lat", "pickup_lon", "pickup_time",
               "dropoff_lat", "dropoff_lon", "dropoff_time")

# Layout written by write_events (header line, UTC seconds)
EVENT_COLUMNS = ColumnMap(columns={name: i for i, name in enumerate(CHECKIN_FIELDS)},
                          has_header=True)

# Foursquare NYC dump: user, venue, category id, category name, lat, lon, utc offset, utc time
FOURSQUARE_NYC = ColumnMap(columns={"user_id": 0, "poi_id": 1, "category_id": 2,
                                    "category_name": 3, "lat": 4, "lon": 5, "timestamp": 7})

TAXI_COLUMNS = ColumnMap(columns={name: i for i, name in enumerate(TAXI_FIELDS)},
                         has_header=True)

# Beijing taxi orders: comma-separated, naive local times
BEIJING_TAXI = ColumnMap(columns={"id": 0, "pickup_lon": 1, "pickup_lat": 2, "pickup_time": 3,
                                  "dropoff_lon": 4, "dropoff_lat": 5, "dropoff_time": 6},
                         delimiter=",", has_header=True, timezone="Asia/Shanghai")

CITY_COLUMN_MAPS = {
    "nyc": (FOURSQUARE_NYC, TAXI_COLUMNS),
    "bj": (EVENT_COLUMNS, BEIJING_TAXI),
    # The layouts write_events and write_taxi produce
    "tsv": (EVENT_COLUMNS, TAXI_COLUMNS),
}

# ============================================
# PARSING
# ============================================


def _check_coordinates(lat: float, lon: float):
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise DomainError(f"Non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise DomainError(f"Latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise DomainError(f"Longitude {lon} outside [-180, 180]")


def parse_timestamp(raw: str, timezone: str = "UTC") -> int:
    """Parse epoch seconds or a date string into UTC seconds"""
    raw = raw.strip()
    if not raw:
        raise ValueError("empty timestamp")
    if raw.lstrip("-").isdigit():
        return int(raw)
    parsed = date_parser.parse(raw)
    if parsed.tzinfo is None:
        parsed = pytz.timezone(timezone).localize(parsed)
    return int(parsed.timestamp())


def window_start(timestamp: int) -> int:
    return (timestamp // SECONDS_PER_WINDOW) * SECONDS_PER_WINDOW


def _open_text(source: Source) -> IO[str]:
    # Undecodable bytes survive as lone surrogates and fail in _require_utf8
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8", errors="surrogateescape"), newline="")
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", errors="surrogateescape", newline="")
    return io.TextIOWrapper(source, encoding="utf-8", errors="surrogateescape", newline="")


def _require_utf8(row: Sequence[str]):
    """Raise UnicodeEncodeError (a ValueError) for a row holding invalid UTF-8"""
    for field in row:
        field.encode("utf-8")


def _rows(source: Source, fmt: ColumnMap) -> Iterator[List[str]]:
    handle = _open_text(source)
    try:
        reader = csv.reader(handle, delimiter=fmt.delimiter, quoting=csv.QUOTE_NONE)
        for i, row in enumerate(reader):
            if i == 0 and fmt.has_header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield row
    finally:
        if isinstance(source, (str, os.PathLike, bytes)):
            handle.close()
        else:
            handle.detach()


def parse_checkins(source: Source, fmt: ColumnMap = EVENT_COLUMNS,
                   stats: Optional[ParseStats] = None) -> EventSequence:
    """
    Parse a check-in corpus into a time-sorted EventSequence

    Malformed rows are skipped and counted in stats.

    Raises:
        OSError: source cannot be read
        EmptyCorpusError: no valid row
    """
    stats = stats if stats is not None else ParseStats()
    events: List[CheckinEvent] = []
    for row in _rows(source, fmt):
        stats.rows += 1
        try:
            _require_utf8(row)
            event = CheckinEvent(
                user_id=row[fmt.index("user_id")].strip(),
                poi_id=row[fmt.index("poi_id")].strip(),
                category_id=row[fmt.index("category_id")].strip(),
                category_name=row[fmt.index("category_name")],
                lat=float(row[fmt.index("lat")]),
                lon=float(row[fmt.index("lon")]),
                timestamp=parse_timestamp(row[fmt.index("timestamp")], fmt.timezone),
            )
            if not event.user_id or not event.poi_id:
                raise ValueError("empty identifier")
        except (ValueError, IndexError, OverflowError) as e:
            stats.skipped += 1
            logger.debug(f"Skipping check-in row {stats.rows}: {e}")
            continue
        events.append(event)

    if not events:
        raise EmptyCorpusError(f"No valid check-in rows ({stats.skipped} skipped)")
    if stats.skipped:
        logger.warning(f"Skipped {stats.skipped} malformed check-in rows of {stats.rows}")
    stats.kept = len(events)
    events.sort(key=lambda e: e.timestamp)
    return EventSequence(tuple(events))


def parse_taxi(source: Source, fmt: ColumnMap = TAXI_COLUMNS,
               stats: Optional[ParseStats] = None) -> List[TaxiRecord]:
    """
    Parse taxi orders; rows with bad coordinates or reversed times are skipped

    Raises:
        OSError: source cannot be read
        EmptyCorpusError: no valid row
    """
    stats = stats if stats is not None else ParseStats()
    records: List[TaxiRecord] = []
    for row in _rows(source, fmt):
        stats.rows += 1
        try:
            _require_utf8(row)
            record = TaxiRecord(
                id=row[fmt.index("id")].strip(),
                pickup=TripEnd(float(row[fmt.index("pickup_lat")]),
                               float(row[fmt.index("pickup_lon")]),
                               parse_timestamp(row[fmt.index("pickup_time")], fmt.timezone)),
                dropoff=TripEnd(float(row[fmt.index("dropoff_lat")]),
                                float(row[fmt.index("dropoff_lon")]),
                                parse_timestamp(row[fmt.index("dropoff_time")], fmt.timezone)),
            )
        except (ValueError, IndexError, OverflowError) as e:
            stats.skipped += 1
            logger.debug(f"Skipping taxi row {stats.rows}: {e}")
            continue
        records.append(record)

    if not records:
        raise EmptyCorpusError(f"No valid taxi rows ({stats.skipped} skipped)")
    if stats.skipped:
        logger.warning(f"Skipped {stats.skipped} malformed taxi rows of {stats.rows}")
    stats.kept = len(records)
    return records


# ============================================
# SERIALIZATION
# ============================================


def write_events(seq: EventSequence, stream: IO[str]):
    """Write events in the EVENT_COLUMNS layout (one header line, tab-separated)"""
    stream.write("\t".join(CHECKIN_FIELDS) + "\n")
    for e in seq:
        stream.write(f"{e.user_id}\t{e.poi_id}\t{e.category_id}\t{e.category_name}\t"
                     f"{e.lat!r}\t{e.lon!r}\t{e.timestamp}\n")


def write_taxi(records: Sequence[TaxiRecord], stream: IO[str]):
    """Write taxi records in the TAXI_COLUMNS layout"""
    stream.write("\t".join(TAXI_FIELDS) + "\n")
    for r in records:
        stream.write(f"{r.id}\t{r.pickup.lat!r}\t{r.pickup.lon!r}\t{r.pickup.timestamp}\t"
                     f"{r.dropoff.lat!r}\t{r.dropoff.lon!r}\t{r.dropoff.timestamp}\n")


def write_temporal_contexts(contexts: Sequence[TemporalContext], stream: IO[str]):
    """One line per window: window_start, M, then inner/in/out triples zone by zone"""
    stream.write("window_start\tM\tflows\n")
    for ctx in contexts:
        flows = " ".join(str(int(v)) for v in ctx.matrix.reshape(-1))
        stream.write(f"{ctx.window_start}\t{ctx.matrix.shape[0]}\t{flows}\n")


# ============================================
# TEMPORAL CONTEXT
# ============================================

INNER, IN_FLOW, OUT_FLOW = 0, 1, 2


def build_temporal_context(records: Sequence[TaxiRecord], grid: ZoneGrid) -> List[TemporalContext]:
    """
    Hourly inner / in-flow / out-flow counts per zone

    Trips are counted in the window of their pick-up; trips with an end
    outside the grid box are dropped. The returned list covers every window
    from the first to the last kept trip, empty windows as zero matrices.
    """
    if grid.M == 0:
        raise ConfigurationError("Zone grid has no areas (M = 0)")
    if not records:
        return []

    origins = grid.zones_of([r.pickup.lat for r in records], [r.pickup.lon for r in records])
    targets = grid.zones_of([r.dropoff.lat for r in records], [r.dropoff.lon for r in records])
    windows = np.array([window_start(r.pickup.timestamp) for r in records], dtype=np.int64)

    kept = (origins >= 0) & (targets >= 0)
    dropped = int((~kept).sum())
    if dropped:
        logger.info(f"Dropped {dropped} trips outside the zone grid")
    if not kept.any():
        return []
    origins, targets, windows = origins[kept], targets[kept], windows[kept]

    first = int(windows.min())
    slots = (windows - first) // SECONDS_PER_WINDOW
    counts = np.zeros((int(slots.max()) + 1, grid.M, 3))
    same = origins == targets
    np.add.at(counts, (slots[same], origins[same], INNER), 1.0)
    np.add.at(counts, (slots[~same], targets[~same], IN_FLOW), 1.0)
    np.add.at(counts, (slots[~same], origins[~same], OUT_FLOW), 1.0)

    return [TemporalContext(first + i * SECONDS_PER_WINDOW, counts[i]) for i in range(len(counts))]


# ============================================
# SPLITS
# ============================================


def split_train_test(seq: EventSequence, ratio: float) -> Tuple[EventSequence, EventSequence]:
    """Chronological split: first floor(ratio * n) events train, the rest test"""
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"Split ratio {ratio} must lie in (0, 1)")
    n = len(seq)
    if n < 2:
        raise TooFewEventsError(f"Need at least 2 events to split, got {n}")
    cut = math.floor(ratio * n + 1e-9)
    return seq[:cut], seq[cut:]


def split_groups(seq: EventSequence, k: int) -> List[EventSequence]:
    """k contiguous chronological groups; the remainder goes to the earliest groups"""
    if k < 2:
        raise ConfigurationError(f"Need at least 2 groups, got {k}")
    n = len(seq)
    if n < k:
        raise TooFewEventsError(f"Cannot split {n} events into {k} groups")
    base, extra = divmod(n, k)
    groups, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        groups.append(seq[start:start + size])
        start += size
    return groups


# ============================================
# POI CATALOG AND KG SCHEMA
# ============================================


@dataclass(frozen=True)
class PoiInfo:
    """Static attributes of one POI"""
    poi_id: str
    category_id: str
    category_name: str
    lat: float
    lon: float


@dataclass(frozen=True)
class KGSchema:
    """
    Heads (POIs) linked to tails by "belong to" (category) and "locate at" (zone)

    POI order defines the action index of the imitation agent.
    """
    pois: Tuple[str, ...]
    categories: Tuple[str, ...]
    zones: Tuple[str, ...]
    belongs_to: Mapping[str, str]
    locates_at: Mapping[str, str]

    def __post_init__(self):
        category_set, zone_set = set(self.categories), set(self.zones)
        for poi in self.pois:
            if self.belongs_to.get(poi) not in category_set:
                raise SchemaError(f"POI {poi} has no valid 'belong to' category")
            if self.locates_at.get(poi) not in zone_set:
                raise SchemaError(f"POI {poi} has no valid 'locate at' zone")

    @property
    def is_empty(self) -> bool:
        return not self.pois

    @cached_property
    def action_index(self) -> Dict[str, int]:
        return {poi: i for i, poi in enumerate(self.pois)}

    @cached_property
    def pois_by_category(self) -> Dict[str, Tuple[str, ...]]:
        return _invert(self.pois, self.belongs_to)

    @cached_property
    def pois_by_zone(self) -> Dict[str, Tuple[str, ...]]:
        return _invert(self.pois, self.locates_at)


def _invert(pois: Sequence[str], links: Mapping[str, str]) -> Dict[str, Tuple[str, ...]]:
    grouped: Dict[str, List[str]] = {}
    for poi in pois:
        grouped.setdefault(links[poi], []).append(poi)
    return {k: tuple(v) for k, v in grouped.items()}


@dataclass(frozen=True)
class PoiCatalog:
    """POI attributes in schema order"""
    pois: Tuple[PoiInfo, ...]

    @cached_property
    def by_id(self) -> Dict[str, PoiInfo]:
        return {p.poi_id: p for p in self.pois}

    @cached_property
    def coordinates(self) -> np.ndarray:
        return np.array([(p.lat, p.lon) for p in self.pois], dtype=float).reshape(-1, 2)

    @cached_property
    def category_names(self) -> Tuple[str, ...]:
        return tuple(p.category_name for p in self.pois)

    def __len__(self) -> int:
        return len(self.pois)

    def __contains__(self, poi_id: str) -> bool:
        return poi_id in self.by_id


def build_catalog(seqs: Iterable[EventSequence]) -> PoiCatalog:
    """POI catalog from the first occurrence of each POI, sorted by id"""
    seen: Dict[str, PoiInfo] = {}
    for seq in seqs:
        for e in seq:
            if e.poi_id not in seen:
                seen[e.poi_id] = PoiInfo(e.poi_id, e.category_id, e.category_name, e.lat, e.lon)
    return PoiCatalog(tuple(seen[k] for k in sorted(seen)))


def zone_id(index: int) -> str:
    return f"z{index}"


def build_schema(catalog: PoiCatalog, grid: ZoneGrid) -> KGSchema:
    """Link every catalog POI to its category and the grid zone holding it"""
    belongs_to, locates_at = {}, {}
    for poi in catalog.pois:
        zone = grid.zone_of(poi.lat, poi.lon)
        if zone is None:
            raise SchemaError(f"POI {poi.poi_id} lies outside the zone grid")
        belongs_to[poi.poi_id] = poi.category_id
        locates_at[poi.poi_id] = zone_id(zone)
    return KGSchema(
        pois=tuple(p.poi_id for p in catalog.pois),
        categories=tuple(sorted(set(belongs_to.values()))),
        zones=tuple(zone_id(z) for z in range(grid.M)),
        belongs_to=belongs_to,
        locates_at=locates_at,
    )
