"""
Tests for check-in / taxi ingestion, temporal contexts, splits and the synthetic world
"""

import io

import numpy as np
import pytest

from conftest import make_world
from corpus.mobility_data import (BEIJING_TAXI, EVENT_COLUMNS, FOURSQUARE_NYC,
                                  INNER, IN_FLOW, OUT_FLOW, CheckinEvent,
                                  EventSequence, ParseStats, TaxiRecord,
                                  TemporalContextIndex, TripEnd, ZoneGrid,
                                  build_catalog, build_schema,
                                  build_temporal_context, parse_checkins,
                                  parse_taxi, split_groups,
                                  split_train_test, write_events,
                                  write_taxi, write_temporal_contexts)
from corpus.synthetic import SynthSpec, generate_synthetic, make_preferences
from services.exceptions import (ConfigurationError, DomainError,
                                 EmptyCorpusError, SchemaError,
                                 TooFewEventsError)

HEADER = "user_id\tpoi_id\tcategory_id\tcategory_name\tlat\tlon\ttimestamp\n"
TAXI_HEADER = "id\tpickup_lat\tpickup_lon\tpickup_time\tdropoff_lat\tdropoff_lon\tdropoff_time\n"

GRID = ZoneGrid(0.0, 0.0, 1.0, 2.0, rows=1, cols=2)


def _event(ts, user="u1", poi="p1"):
    return CheckinEvent(user, poi, "c1", "coffee shop", 40.7, -73.9, ts)


def _sequence(n):
    return EventSequence(tuple(_event(1000 + i) for i in range(n)))


def _trip(i, origin, target, ts=0):
    return TaxiRecord(f"t{i}", TripEnd(*origin, ts), TripEnd(*target, ts + 60))


# ============================================
# PARSING
# ============================================


class TestParseCheckins:

    def test_well_formed_rows_are_sorted(self):
        data = (HEADER
                + "u1\tp1\tc1\tcoffee shop\t40.70\t-73.90\t300\n"
                + "u2\tp2\tc2\tart museum\t40.71\t-73.91\t100\n"
                + "u1\tp3\tc1\tcoffee shop\t40.72\t-73.92\t200\n").encode()
        seq = parse_checkins(data, EVENT_COLUMNS)
        assert len(seq) == 3
        assert [e.timestamp for e in seq] == [100, 200, 300]

    def test_out_of_range_latitude_is_skipped(self):
        data = (HEADER
                + "u1\tp1\tc1\tcoffee shop\t200\t-73.90\t300\n"
                + "u2\tp2\tc2\tart museum\t40.71\t-73.91\t100\n").encode()
        stats = ParseStats()
        seq = parse_checkins(data, EVENT_COLUMNS, stats)
        assert len(seq) == 1
        assert stats.skipped == 1
        assert stats.kept == 1

    def test_no_valid_rows_is_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            parse_checkins((HEADER + "u1\tp1\tc1\tbar\tnan\t0\t1\n").encode(), EVENT_COLUMNS)

    def test_missing_file_raises_os_error(self, tmp_path):
        with pytest.raises(OSError):
            parse_checkins(str(tmp_path / "missing.tsv"))

    def test_invalid_utf8_row_is_skipped(self, tmp_path):
        good = b"u1\tp1\tc1\tcoffee shop\t40.70\t-73.90\t100\n"
        bad = b"u2\tp2\tc2\tcaf\xff bar\t40.71\t-73.91\t200\n"
        data = HEADER.encode() + good + bad + good.replace(b"100", b"300")
        for source in (data, io.BytesIO(data)):
            stats = ParseStats()
            seq = parse_checkins(source, EVENT_COLUMNS, stats)
            assert [e.timestamp for e in seq] == [100, 300]
            assert (stats.rows, stats.skipped) == (3, 1)
        path = tmp_path / "checkins.tsv"
        path.write_bytes(data)
        assert len(parse_checkins(str(path), EVENT_COLUMNS)) == 2

    def test_foursquare_layout_parses_utc_dates(self):
        row = "u1\tv1\tc1\tBar\t40.7\t-73.9\t-240\tTue Apr 03 18:00:09 +0000 2012\n"
        seq = parse_checkins(row.encode(), FOURSQUARE_NYC)
        assert seq[0].timestamp == 1333476009
        assert seq[0].category_name == "Bar"

    def test_serialize_and_reparse_round_trip(self, small_world):
        buf = io.StringIO()
        write_events(small_world.events, buf)
        again = parse_checkins(buf.getvalue().encode(), EVENT_COLUMNS)
        assert again == small_world.events


class TestParseTaxi:

    def test_two_valid_rows(self):
        data = (TAXI_HEADER
                + "t1\t0.5\t0.5\t100\t0.6\t1.5\t200\n"
                + "t2\t0.5\t1.5\t300\t0.6\t0.5\t400\n").encode()
        assert len(parse_taxi(data)) == 2

    def test_dropoff_before_pickup_is_skipped(self):
        data = (TAXI_HEADER
                + "t1\t0.5\t0.5\t500\t0.6\t1.5\t200\n"
                + "t2\t0.5\t1.5\t300\t0.6\t0.5\t400\n").encode()
        stats = ParseStats()
        records = parse_taxi(data, stats=stats)
        assert [r.id for r in records] == ["t2"]
        assert stats.skipped == 1

    def test_invalid_utf8_row_is_skipped(self):
        data = (TAXI_HEADER.encode()
                + b"t\xfe1\t0.5\t0.5\t100\t0.6\t1.5\t200\n"
                + b"t2\t0.5\t1.5\t300\t0.6\t0.5\t400\n")
        stats = ParseStats()
        assert [r.id for r in parse_taxi(data, stats=stats)] == ["t2"]
        assert stats.skipped == 1

    def test_beijing_layout_reads_local_time(self):
        data = ("id,plon,plat,ptime,dlon,dlat,dtime\n"
                "t1,116.40,39.90,2015-05-01 08:00:00,116.41,39.91,2015-05-01 08:20:00\n").encode()
        (record,) = parse_taxi(data, BEIJING_TAXI)
        assert record.pickup.timestamp == 1430438400
        assert record.pickup.lat == pytest.approx(39.90)
        assert record.dropoff.timestamp - record.pickup.timestamp == 1200

    def test_write_then_parse_keeps_records(self):
        records = [_trip(0, (0.5, 0.5), (0.5, 1.5), 3600), _trip(1, (0.2, 0.2), (0.3, 0.3), 7200)]
        buf = io.StringIO()
        write_taxi(records, buf)
        assert parse_taxi(buf.getvalue().encode()) == records


# ============================================
# TEMPORAL CONTEXT
# ============================================


class TestTemporalContext:

    def test_trip_inside_one_zone_counts_as_inner(self):
        (ctx,) = build_temporal_context([_trip(0, (0.5, 0.2), (0.6, 0.4))], GRID)
        expected = np.zeros((2, 3))
        expected[0, INNER] = 1
        np.testing.assert_array_equal(ctx.matrix, expected)

    def test_trip_between_zones_counts_out_and_in_flow(self):
        (ctx,) = build_temporal_context([_trip(0, (0.5, 0.2), (0.5, 1.8))], GRID)
        assert ctx.matrix[0, OUT_FLOW] == 1
        assert ctx.matrix[1, IN_FLOW] == 1
        assert ctx.matrix.sum() == 2

    def test_matches_per_trip_tally(self, rng):
        trips, tally = [], {}
        for i in range(100):
            origin = (rng.uniform(0.01, 0.99), rng.uniform(0.01, 1.99))
            target = (rng.uniform(0.01, 0.99), rng.uniform(0.01, 1.99))
            ts = int(rng.integers(0, 5 * 3600))
            trips.append(_trip(i, origin, target, ts))
            window = ts // 3600
            zo, zt = int(origin[1] >= 1.0), int(target[1] >= 1.0)
            m = tally.setdefault(window, np.zeros((2, 3)))
            if zo == zt:
                m[zo, INNER] += 1
            else:
                m[zo, OUT_FLOW] += 1
                m[zt, IN_FLOW] += 1
        contexts = build_temporal_context(trips, GRID)
        for ctx in contexts:
            expected = tally.get(ctx.window_start // 3600, np.zeros((2, 3)))
            np.testing.assert_array_equal(ctx.matrix, expected)

    def test_trips_are_conserved(self, small_world):
        contexts = build_temporal_context(small_world.taxis, small_world.grid)
        total = sum(c.matrix for c in contexts)
        kept = len(small_world.taxis)
        assert total[:, INNER].sum() + total[:, OUT_FLOW].sum() == kept
        assert total[:, INNER].sum() + total[:, IN_FLOW].sum() == kept

    def test_trips_outside_grid_are_dropped(self):
        contexts = build_temporal_context(
            [_trip(0, (0.5, 0.2), (0.6, 0.4)), _trip(1, (5.0, 5.0), (0.5, 0.5))], GRID)
        assert sum(c.matrix.sum() for c in contexts) == 1

    def test_empty_windows_are_zero(self):
        contexts = build_temporal_context(
            [_trip(0, (0.5, 0.2), (0.6, 0.4), 0), _trip(1, (0.5, 0.2), (0.6, 0.4), 3 * 3600)], GRID)
        assert len(contexts) == 4
        assert contexts[1].matrix.sum() == 0
        index = TemporalContextIndex(contexts, GRID.M)
        assert index.matrix_at(10 * 3600).sum() == 0
        assert index.matrix_at(3 * 3600 + 5)[0, INNER] == 1

    def test_grid_without_zones_is_rejected(self):
        with pytest.raises(ConfigurationError):
            build_temporal_context([_trip(0, (0.5, 0.2), (0.6, 0.4))],
                                   ZoneGrid(0.0, 0.0, 1.0, 2.0, rows=0, cols=2))

    def test_context_file_layout(self, small_world):
        contexts = build_temporal_context(small_world.taxis, small_world.grid)
        buf = io.StringIO()
        write_temporal_contexts(contexts, buf)
        header, *lines = buf.getvalue().splitlines()
        assert header == "window_start\tM\tflows"
        assert len(lines) == len(contexts)
        for line, ctx in zip(lines, contexts):
            start, m, flows = line.split("\t")
            assert (int(start), int(m)) == (ctx.window_start, small_world.grid.M)
            np.testing.assert_array_equal(np.array(flows.split(), dtype=float).reshape(-1, 3),
                                          ctx.matrix)


# ============================================
# SPLITS
# ============================================


class TestSplits:

    @pytest.mark.parametrize("n,ratio,sizes", [(10, 0.9, (9, 1)), (100, 0.5, (50, 50))])
    def test_train_test_sizes(self, n, ratio, sizes):
        train, test = split_train_test(_sequence(n), ratio)
        assert (len(train), len(test)) == sizes

    def test_train_precedes_test(self):
        train, test = split_train_test(_sequence(1000), 0.9)
        assert max(e.timestamp for e in train) <= min(e.timestamp for e in test)
        assert train.concatenate(test) == _sequence(1000)

    def test_single_event_cannot_be_split(self):
        with pytest.raises(TooFewEventsError):
            split_train_test(_sequence(1), 0.9)

    def test_ten_events_five_groups(self):
        assert [len(g) for g in split_groups(_sequence(10), 5)] == [2] * 5

    def test_remainder_goes_to_earliest_groups(self):
        groups = split_groups(_sequence(11), 5)
        assert [len(g) for g in groups] == [3, 2, 2, 2, 2]
        joined = groups[0]
        for g in groups[1:]:
            joined = joined.concatenate(g)
        assert joined == _sequence(11)

    def test_too_few_events_for_groups(self):
        with pytest.raises(TooFewEventsError):
            split_groups(_sequence(3), 5)


# ============================================
# CATALOG AND SCHEMA
# ============================================


class TestSchema:

    def test_catalog_keeps_first_occurrence(self):
        seq = EventSequence((_event(1, poi="p2"), _event(2, poi="p1"), _event(3, poi="p2")))
        catalog = build_catalog([seq])
        assert [p.poi_id for p in catalog.pois] == ["p1", "p2"]

    def test_poi_outside_grid_is_schema_error(self):
        seq = EventSequence((_event(1),))
        with pytest.raises(SchemaError):
            build_schema(build_catalog([seq]), GRID)

    def test_schema_links_category_and_zone(self, small_world):
        schema = small_world.schema
        for j, poi in enumerate(schema.pois):
            assert schema.belongs_to[poi] == f"c{j % 2}"
            assert schema.locates_at[poi] == f"z{j % 2}"


# ============================================
# SYNTHETIC WORLD
# ============================================


class TestSynthetic:

    def test_same_seed_is_identical(self):
        a, b = make_world(seed=7), make_world(seed=7)
        buf_a, buf_b = io.StringIO(), io.StringIO()
        write_events(a.events, buf_a)
        write_events(b.events, buf_b)
        assert buf_a.getvalue() == buf_b.getvalue()
        assert a.taxis == b.taxis

    def test_single_poi_world(self):
        world = make_world(n_pois=1, n_categories=1, n_events=20)
        assert {e.poi_id for e in world.events} == {"p000"}

    def test_more_categories_than_pois_is_rejected(self):
        spec = SynthSpec(n_users=1, n_pois=2, n_categories=3, n_events=5,
                         preferences=make_preferences(1, 2))
        with pytest.raises(ConfigurationError):
            generate_synthetic(spec, 0)

    def test_transition_frequencies_follow_preferences(self):
        prefs = make_preferences(1, 20, 0.9, seed=3)
        spec = SynthSpec(n_users=1, n_pois=20, n_categories=4, n_events=10000, preferences=prefs,
                         trips_per_visit=0, background_trips=0)
        world = generate_synthetic(spec, 3)
        index = world.schema.action_index
        visits = [index[e.poi_id] for e in world.events]
        counts = np.zeros((20, 20))
        for prev, cur in zip(visits, visits[1:]):
            counts[prev, cur] += 1
        rows = counts.sum(axis=1) > 0
        empirical = counts[rows] / counts[rows].sum(axis=1, keepdims=True)
        tv = 0.5 * np.abs(empirical - prefs[0][rows]).sum(axis=1)
        assert tv.mean() < 0.05

    def test_coordinates_are_validated(self):
        with pytest.raises(DomainError):
            CheckinEvent("u", "p", "c", "bar", 95.0, 0.0, 1)
