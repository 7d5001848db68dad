"""
Tests for user profiles, the temporal transform and state assembly
"""

import math

import numpy as np
import pytest

from corpus.mobility_data import KGSchema
from services.exceptions import ConfigurationError, ShapeError
from services.spatial_kg import init_kg
from services.user_state import (UserProfile, UserUpdateParams,
                                 assemble_state, init_users,
                                 temporal_transform, update_user_profile)

SCHEMA = KGSchema(("a", "b"), ("c1",), ("z0",), {"a": "c1", "b": "c1"}, {"a": "z0", "b": "z0"})


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestTemporalTransform:

    def test_zero_input_gives_one_half(self):
        out = temporal_transform(UserUpdateParams.zeros(4, 2), np.zeros((2, 3)))
        np.testing.assert_array_equal(out, np.full(4, 0.5))

    def test_two_by_two_hand_example(self):
        params = UserUpdateParams.zeros(2, 2)
        params.W_T1 = np.array([[0.1, -0.2], [0.3, 0.4]])
        params.W_T2 = np.array([0.5, -1.0, 0.25])
        params.b_T = np.array([0.05, -0.05])
        T = np.array([[1.0, 2.0, 4.0], [0.0, 3.0, 1.0]])

        pooled = [1.0 * 0.5 + 2.0 * -1.0 + 4.0 * 0.25, 0.0 * 0.5 + 3.0 * -1.0 + 1.0 * 0.25]
        expected = [_sig(0.1 * pooled[0] - 0.2 * pooled[1] + 0.05),
                    _sig(0.3 * pooled[0] + 0.4 * pooled[1] - 0.05)]
        np.testing.assert_allclose(temporal_transform(params, T), expected, rtol=0, atol=1e-12)

    def test_output_in_open_unit_interval(self, rng):
        params = UserUpdateParams(rng.normal(size=3), rng.normal(size=3), 0.0,
                                  rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=3))
        for _ in range(20):
            out = temporal_transform(params, rng.integers(0, 6, size=(4, 3)).astype(float))
            assert np.all((out > 0) & (out < 1))

    def test_zone_count_mismatch(self):
        with pytest.raises(ShapeError):
            temporal_transform(UserUpdateParams.zeros(4, 2), np.zeros((3, 3)))


class TestUpdateUserProfile:

    def test_zero_everything(self):
        profile = UserProfile("u", np.zeros(3))
        new = update_user_profile(profile, UserUpdateParams.zeros(3, 1), np.zeros(3), np.zeros(3), "a")
        np.testing.assert_array_equal(new, np.full(3, 0.5))
        assert profile.step == 1
        assert profile.last_poi == "a"

    def test_orthogonal_head_decays_profile(self):
        u = np.array([0.4, -0.6])
        profile = UserProfile("u", u)
        params = UserUpdateParams.zeros(2, 1)
        params.W_u = np.array([5.0, 5.0])
        new = update_user_profile(profile, params, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        np.testing.assert_allclose(new, [_sig(0.5 * 0.4), _sig(0.5 * -0.6)], rtol=0, atol=1e-15)

    def test_two_dimensional_hand_example(self):
        u = np.array([0.1, 0.3])
        profile = UserProfile("u", u)
        params = UserUpdateParams.zeros(2, 1)
        params.W_u = np.array([0.7, -0.2])
        params.W_au = np.array([2.0, -1.0])
        params.b_au = 0.4
        h, ctx = np.array([0.6, 0.2]), np.array([0.5, 0.9])

        inner = 0.6 * 0.5 + 0.2 * 0.9
        alpha = _sig(2.0 * 0.1 - 1.0 * 0.3 + 0.4)
        expected = [_sig(alpha * 0.1 + (1 - alpha) * 0.7 * inner),
                    _sig(alpha * 0.3 + (1 - alpha) * -0.2 * inner)]
        np.testing.assert_allclose(update_user_profile(profile, params, h, ctx), expected,
                                   rtol=0, atol=1e-12)

    def test_old_vector_is_not_mutated(self):
        u = np.array([0.1, 0.2])
        profile = UserProfile("u", u)
        update_user_profile(profile, UserUpdateParams.zeros(2, 1), np.ones(2), np.ones(2))
        np.testing.assert_array_equal(u, [0.1, 0.2])
        assert profile.u is not u

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            update_user_profile(UserProfile("u", np.zeros(3)), UserUpdateParams.zeros(2, 1),
                                np.zeros(2), np.zeros(2))


class TestAssembleState:

    def test_cold_start_uses_zero_head(self):
        kg = init_kg(SCHEMA, 2, 0)
        state = assemble_state(UserProfile("u", np.array([0.1, 0.2])), kg, np.array([0.5, 0.6]))
        assert state.dim == 6
        np.testing.assert_array_equal(state.s, [0.1, 0.2, 0.0, 0.0, 0.5, 0.6])

    def test_slots_follow_profile_head_context(self):
        kg = init_kg(SCHEMA, 3, 0)
        profile = UserProfile("u", np.array([1.0, 2.0, 3.0]), last_poi="b", step=4)
        ctx = np.array([0.7, 0.8, 0.9])
        state = assemble_state(profile, kg, ctx)
        np.testing.assert_array_equal(state.s[:3], profile.u)
        np.testing.assert_array_equal(state.s[3:6], kg.heads["b"])
        np.testing.assert_array_equal(state.s[6:], ctx)
        assert state.step == 4

    def test_pooling_uses_mean_head(self):
        kg = init_kg(SCHEMA, 3, 0)
        profile = UserProfile("u", np.zeros(3), last_poi="a")
        state = assemble_state(profile, kg, np.zeros(3), pooling=True)
        np.testing.assert_allclose(state.s[3:6], (kg.heads["a"] + kg.heads["b"]) / 2)

    def test_inputs_are_untouched(self):
        kg = init_kg(SCHEMA, 2, 0)
        profile = UserProfile("u", np.array([0.1, 0.2]), last_poi="a")
        head = kg.heads["a"].copy()
        state = assemble_state(profile, kg, np.zeros(2))
        state.s[:] = 9.0
        np.testing.assert_array_equal(profile.u, [0.1, 0.2])
        np.testing.assert_array_equal(kg.heads["a"], head)


class TestInitUsers:

    def test_dimension_and_bounds(self):
        table = init_users(["u2", "u1", "u3"], 200, 0)
        assert sorted(table) == ["u1", "u2", "u3"]
        for profile in table.values():
            assert profile.u.shape == (200,)
            assert np.abs(profile.u).max() <= 0.5 / 200
            assert profile.step == 0 and profile.last_poi is None

    def test_same_seed_is_identical(self):
        a, b = init_users(["x", "y"], 5, 9), init_users(["y", "x"], 5, 9)
        for uid in a:
            np.testing.assert_array_equal(a[uid].u, b[uid].u)

    def test_empty_user_set(self):
        with pytest.raises(ConfigurationError):
            init_users([], 4, 0)
