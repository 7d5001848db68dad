"""
Tests for the spatial knowledge graph and its gated updates
"""

import math

import numpy as np
import pytest

from corpus.mobility_data import KGSchema
from services.exceptions import (ConfigurationError, LookupFailure,
                                 ShapeError)
from services.gating import gate_coefficient, gated_blend, sigmoid
from services.spatial_kg import (KGState, KGUpdateParams, Relation,
                                 apply_kg_step, init_kg, sibling_paths,
                                 siblings, update_sibling_pois, update_tails,
                                 update_visited_poi)

SCHEMA = KGSchema(pois=("a", "b", "c"), categories=("c1", "c2"), zones=("z0", "z1"),
                  belongs_to={"a": "c1", "b": "c1", "c": "c2"},
                  locates_at={"a": "z0", "b": "z1", "c": "z0"})

CAT = (Relation.BELONGS_TO, "c1")
ZONE = (Relation.LOCATES_AT, "z0")


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _kg(N=2, fill=0.0):
    heads = {p: np.full(N, fill) for p in SCHEMA.pois}
    tails = {(Relation.BELONGS_TO, c): np.full(N, fill) for c in SCHEMA.categories}
    tails.update({(Relation.LOCATES_AT, z): np.full(N, fill) for z in SCHEMA.zones})
    return KGState(SCHEMA, N, heads, tails, {rel: np.zeros(N) for rel in Relation})


def _random_schema(rng, n=20, n_cat=4, n_zone=3):
    pois = tuple(f"p{i:02d}" for i in range(n))
    return KGSchema(pois, tuple(f"c{i}" for i in range(n_cat)), tuple(f"z{i}" for i in range(n_zone)),
                    {p: f"c{rng.integers(n_cat)}" for p in pois},
                    {p: f"z{rng.integers(n_zone)}" for p in pois})


def _random_params(rng, N):
    return KGUpdateParams(rng.normal(size=N), rng.normal(size=N), float(rng.normal()),
                          rng.normal(size=N), float(rng.normal()),
                          rng.normal(size=N), float(rng.normal()))


# ============================================
# INITIALISATION
# ============================================


class TestInitKg:

    def test_same_seed_is_identical(self):
        a, b = init_kg(SCHEMA, 8, 5), init_kg(SCHEMA, 8, 5)
        for poi in SCHEMA.pois:
            np.testing.assert_array_equal(a.heads[poi], b.heads[poi])
        for key in a.tails:
            np.testing.assert_array_equal(a.tails[key], b.tails[key])

    def test_dimension_and_bounds(self):
        kg = init_kg(SCHEMA, 200, 0)
        vectors = [*kg.heads.values(), *kg.tails.values(), *kg.relations.values()]
        assert all(v.shape == (200,) for v in vectors)
        assert max(np.abs(v).max() for v in vectors) <= 0.5 / 200

    def test_every_tail_has_an_embedding(self):
        kg = init_kg(SCHEMA, 4, 0)
        assert set(kg.tails) == {CAT, (Relation.BELONGS_TO, "c2"), ZONE, (Relation.LOCATES_AT, "z1")}

    def test_empty_schema_is_rejected(self):
        with pytest.raises(ConfigurationError):
            init_kg(KGSchema((), (), (), {}, {}), 4, 0)


# ============================================
# GATES
# ============================================


class TestGateCoefficient:

    def test_zero_parameters_give_one_half(self):
        assert gate_coefficient(np.zeros(3), 0.0, np.array([4.0, -2.0, 7.0])) == 0.5

    def test_hand_value(self):
        assert gate_coefficient(np.array([1.0, 0.0]), 0.0,
                                np.array([math.log(3), 9.0])) == pytest.approx(0.75, abs=1e-12)

    def test_stays_below_one(self):
        alpha = gate_coefficient(np.array([1.0]), 0.0, np.array([30.0]))
        assert 0.99 < alpha < 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gate_coefficient(np.zeros(2), 0.0, np.zeros(3))

    def test_blend_is_convex_before_squash(self, rng):
        for _ in range(50):
            old, cand = rng.normal(size=5), rng.normal(size=5)
            out, cache = gated_blend(old, cand, rng.normal(size=5), float(rng.normal()), squash=False)
            assert 0.0 < cache.alpha < 1.0
            assert np.all(out >= np.minimum(old, cand) - 1e-12)
            assert np.all(out <= np.maximum(old, cand) + 1e-12)


# ============================================
# VISITED POI
# ============================================


class TestUpdateVisitedPoi:

    def test_orthogonal_visitor_and_zero_head(self):
        kg = _kg()
        new = update_visited_poi(kg, KGUpdateParams.zeros(2), "a",
                                 np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(new, [0.5, 0.5])

    def test_two_dimensional_hand_example(self):
        kg = _kg()
        kg.heads["a"] = np.array([0.2, -0.1])
        params = KGUpdateParams.zeros(2)
        params.W_p = np.array([0.3, -0.4])
        params.W_ap = np.array([1.0, 1.0])
        params.b_ap = 0.1
        u, ctx = np.array([1.0, 2.0]), np.array([0.5, 0.25])

        inner = 1.0 * 0.5 + 2.0 * 0.25
        alpha = _sig(1.0 * 0.2 + 1.0 * -0.1 + 0.1)
        expected = [_sig(alpha * 0.2 + (1 - alpha) * 0.3 * inner),
                    _sig(alpha * -0.1 + (1 - alpha) * -0.4 * inner)]
        np.testing.assert_allclose(update_visited_poi(kg, params, "a", u, ctx), expected,
                                   rtol=0, atol=1e-12)

    def test_larger_gate_keeps_more_old_state(self):
        kg = _kg()
        kg.heads["a"] = np.array([0.8, 0.8])
        u, ctx = np.array([1.0, 1.0]), np.array([0.5, 0.5])
        outputs = []
        for w in (0.0, 1.0, 2.0):
            params = KGUpdateParams.zeros(2)
            params.W_p = np.array([-1.0, -1.0])
            params.W_ap = np.array([w, w])
            outputs.append(update_visited_poi(kg, params, "a", u, ctx)[0])
        assert outputs[0] < outputs[1] < outputs[2]

    def test_output_is_in_unit_interval(self, rng):
        kg = _kg(4)
        for _ in range(20):
            new = update_visited_poi(kg, _random_params(rng, 4), "b", rng.normal(size=4),
                                     rng.random(4))
            assert np.all((new > 0) & (new < 1))

    def test_unknown_poi(self):
        with pytest.raises(LookupFailure):
            update_visited_poi(_kg(), KGUpdateParams.zeros(2), "zzz", np.zeros(2), np.zeros(2))


# ============================================
# TAILS
# ============================================


class TestUpdateTails:

    def test_fixed_point(self):
        kg = _kg()
        kg.relations[Relation.BELONGS_TO] = np.array([0.1, 0.2])
        new_head = np.array([0.3, 0.3])
        kg.tails[CAT] = new_head + kg.relations[Relation.BELONGS_TO]
        updated = update_tails(kg, KGUpdateParams.zeros(2), "a", new_head)
        np.testing.assert_allclose(updated[CAT], kg.tails[CAT], rtol=0, atol=1e-15)

    def test_midpoint(self):
        kg = _kg()
        kg.tails[CAT] = np.array([2.0, 2.0])
        kg.relations[Relation.BELONGS_TO] = np.array([-0.5, 0.5])
        updated = update_tails(kg, KGUpdateParams.zeros(2), "a", np.array([0.5, -0.5]))
        np.testing.assert_allclose(updated[CAT], [1.0, 1.0], rtol=0, atol=1e-15)

    def test_two_dimensional_hand_example(self):
        kg = _kg()
        kg.tails[ZONE] = np.array([0.4, -0.2])
        kg.relations[Relation.LOCATES_AT] = np.array([0.1, 0.3])
        params = KGUpdateParams.zeros(2)
        params.W_at = np.array([0.5, -1.0])
        params.b_at = -0.2
        head = np.array([0.6, 0.7])

        alpha = _sig(0.5 * 0.4 + -1.0 * -0.2 - 0.2)
        expected = [alpha * 0.4 + (1 - alpha) * (0.6 + 0.1),
                    alpha * -0.2 + (1 - alpha) * (0.7 + 0.3)]
        np.testing.assert_allclose(update_tails(kg, params, "a", head)[ZONE], expected,
                                   rtol=0, atol=1e-12)

    def test_tail_sigmoid_switch(self):
        kg = _kg()
        kg.tails[CAT] = np.array([2.0, 2.0])
        plain = update_tails(kg, KGUpdateParams.zeros(2), "a", np.zeros(2))[CAT]
        squashed = update_tails(kg, KGUpdateParams.zeros(2), "a", np.zeros(2), tail_sigmoid=True)[CAT]
        np.testing.assert_allclose(squashed, sigmoid(plain))

    def test_both_links_are_updated(self):
        updated = update_tails(_kg(), KGUpdateParams.zeros(2), "a", np.ones(2))
        assert set(updated) == {CAT, ZONE}


# ============================================
# SIBLINGS
# ============================================


class TestSiblings:

    def test_poi_unique_in_both_links(self):
        schema = KGSchema(("a", "b"), ("c1", "c2"), ("z0", "z1"),
                          {"a": "c1", "b": "c2"}, {"a": "z0", "b": "z1"})
        assert siblings(schema, "a") == frozenset()

    def test_shared_category_is_mutual(self):
        assert "b" in siblings(SCHEMA, "a")
        assert "a" in siblings(SCHEMA, "b")

    def test_matches_pairwise_scan(self, rng):
        schema = _random_schema(rng)
        for poi in schema.pois:
            expected = {q for q in schema.pois if q != poi and (
                schema.belongs_to[q] == schema.belongs_to[poi]
                or schema.locates_at[q] == schema.locates_at[poi])}
            assert siblings(schema, poi) == expected

    def test_unknown_poi(self):
        with pytest.raises(LookupFailure):
            siblings(SCHEMA, "zzz")

    def test_paths_are_category_first(self):
        schema = KGSchema(("a", "b"), ("c1",), ("z0",), {"a": "c1", "b": "c1"},
                          {"a": "z0", "b": "z0"})
        assert sibling_paths(schema, "a", "b") == [Relation.BELONGS_TO, Relation.LOCATES_AT]


class TestUpdateSiblingPois:

    def test_no_siblings_changes_nothing(self):
        schema = KGSchema(("a", "b"), ("c1", "c2"), ("z0", "z1"),
                          {"a": "c1", "b": "c2"}, {"a": "z0", "b": "z1"})
        kg = init_kg(schema, 3, 0)
        assert update_sibling_pois(kg, KGUpdateParams.zeros(3), "a") == {}

    def test_tail_equal_to_relation(self):
        kg = _kg()
        kg.relations[Relation.BELONGS_TO] = np.array([0.3, -0.7])
        kg.tails[CAT] = kg.relations[Relation.BELONGS_TO].copy()
        updated = update_sibling_pois(kg, KGUpdateParams.zeros(2), "a")
        np.testing.assert_array_equal(updated["b"], [0.5, 0.5])

    def test_three_poi_hand_example(self):
        kg = _kg()
        kg.heads["b"] = np.array([0.1, 0.2])
        kg.heads["c"] = np.array([-0.3, 0.4])
        kg.tails[CAT] = np.array([0.5, 0.6])
        kg.tails[ZONE] = np.array([0.7, -0.1])
        kg.relations[Relation.BELONGS_TO] = np.array([0.05, 0.1])
        kg.relations[Relation.LOCATES_AT] = np.array([-0.2, 0.2])
        params = KGUpdateParams.zeros(2)
        params.W_ah = np.array([1.0, -1.0])
        params.b_ah = 0.3

        def expected(h_old, tail, rel):
            alpha = _sig(h_old[0] - h_old[1] + 0.3)
            return [_sig(alpha * h_old[i] + (1 - alpha) * (tail[i] - rel[i])) for i in range(2)]

        updated = update_sibling_pois(kg, params, "a")
        assert set(updated) == {"b", "c"}
        np.testing.assert_allclose(updated["b"], expected([0.1, 0.2], [0.5, 0.6], [0.05, 0.1]),
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(updated["c"], expected([-0.3, 0.4], [0.7, -0.1], [-0.2, 0.2]),
                                   rtol=0, atol=1e-12)

    def test_sibling_sharing_both_links_is_updated_twice(self):
        schema = KGSchema(("a", "b"), ("c1",), ("z0",), {"a": "c1", "b": "c1"},
                          {"a": "z0", "b": "z0"})
        kg = init_kg(schema, 3, 1)
        params = KGUpdateParams.zeros(3)
        h = kg.heads["b"]
        for rel, key in ((Relation.BELONGS_TO, CAT), (Relation.LOCATES_AT, ZONE)):
            h, _ = gated_blend(h, kg.tails[key] - kg.relations[rel], params.W_ah, params.b_ah)
        np.testing.assert_array_equal(update_sibling_pois(kg, params, "a")["b"], h)


# ============================================
# FULL STEP
# ============================================


class TestApplyKgStep:

    def test_only_visited_tails_and_siblings_change(self, rng):
        schema = _random_schema(rng)
        kg = init_kg(schema, 4, 0)
        params = _random_params(rng, 4)
        relations = {rel: vec.copy() for rel, vec in kg.relations.items()}
        for _ in range(30):
            poi = schema.pois[int(rng.integers(len(schema.pois)))]
            before = kg.copy()
            step = apply_kg_step(kg, params, poi, rng.normal(size=4), rng.random(4))
            allowed_heads = {poi} | siblings(schema, poi)
            for p in schema.pois:
                if p not in allowed_heads:
                    assert kg.heads[p] is before.heads[p]
            allowed_tails = set(before.tail_keys(poi))
            for key in kg.tails:
                if key not in allowed_tails:
                    assert kg.tails[key] is before.tails[key]
            assert step.changed_heads() <= allowed_heads
        for rel in Relation:
            np.testing.assert_array_equal(kg.relations[rel], relations[rel])

    def test_heads_stay_in_unit_interval(self, rng):
        kg = init_kg(SCHEMA, 4, 0)
        params = _random_params(rng, 4)
        for _ in range(20):
            apply_kg_step(kg, params, "a", rng.normal(size=4), rng.random(4))
        for poi in ("a", "b", "c"):
            assert np.all((kg.heads[poi] > 0) & (kg.heads[poi] < 1))
