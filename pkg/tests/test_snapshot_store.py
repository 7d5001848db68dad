"""
Tests for the lossless snapshot files
"""

import io

import numpy as np
import pytest

from conftest import make_corpus
from corpus.snapshot_store import (decode_floats, encode_floats,
                                   load_snapshots, read_kg, save_snapshots,
                                   write_kg)
from services.environment import MobilityEnvironment
from services.exceptions import ConfigurationError, SchemaError, ShapeError
from services.imitation_dqn import LAYER_NAMES, DQNConfig, QNetwork
from services.representation import PARAM_FIELDS, RepresentationParams
from services.reward import HashedCategoryVectors
from services.trainer import TrainerConfig, run_training


def test_floats_survive_text():
    values = np.array([0.1, -1e-300, 1 / 3, np.pi * 1e12])
    np.testing.assert_array_equal(decode_floats(encode_floats(values)), values)


def test_trained_state_round_trips(small_world, tmp_path):
    cfg = TrainerConfig(dim=4, lr1=0.01, dqn=DQNConfig(batch_size=4, memory_capacity=8, hidden=8))
    result = run_training(cfg, small_world.events[:30], make_corpus(small_world))
    env, agent = result.env, result.agent
    save_snapshots(tmp_path, env.profiles, env.kg, env.params, agent.eval_net, agent.target_net)

    profiles, kg, params, eval_net, target_net = load_snapshots(tmp_path, small_world.schema)
    assert sorted(profiles) == sorted(env.profiles)
    for uid, p in env.profiles.items():
        np.testing.assert_array_equal(profiles[uid].u, p.u)
        assert (profiles[uid].last_poi, profiles[uid].step) == (p.last_poi, p.step)
    for poi, h in env.kg.heads.items():
        np.testing.assert_array_equal(kg.heads[poi], h)
    assert kg.tails.keys() == env.kg.tails.keys()
    for key, t in env.kg.tails.items():
        np.testing.assert_array_equal(kg.tails[key], t)
    for name in PARAM_FIELDS:
        np.testing.assert_array_equal(getattr(params, name), getattr(env.params, name))
    for name in LAYER_NAMES:
        np.testing.assert_array_equal(getattr(eval_net, name), getattr(agent.eval_net, name))
        np.testing.assert_array_equal(getattr(target_net, name), getattr(agent.target_net, name))


def test_kg_snapshot_missing_head(small_env, small_world):
    stream = io.StringIO()
    write_kg(small_env.kg, stream)
    kept = [line for line in stream.getvalue().splitlines(keepends=True)
            if not line.startswith(f"head\t{small_world.schema.pois[0]}\t")]
    with pytest.raises(SchemaError):
        read_kg(io.StringIO("".join(kept)), small_world.schema)


def _restore(env, params):
    return MobilityEnvironment.restore(env.schema, env.catalog, env.profiles, env.kg, params,
                                       env.temporal, HashedCategoryVectors(16), env.reward_cfg)


def test_restore_keeps_state(small_env):
    restored = _restore(small_env, small_env.params)
    assert restored.profiles is small_env.profiles
    assert restored.state_dim == small_env.state_dim


def test_restore_rejects_parameters_of_another_size(small_env):
    with pytest.raises(ShapeError):
        _restore(small_env, RepresentationParams.init(5, small_env.temporal.M, 0))
    with pytest.raises(ShapeError):
        _restore(small_env, RepresentationParams.init(small_env.kg.dim, small_env.temporal.M + 1, 0))


def test_restore_rejects_non_finite_parameters(small_env):
    params = small_env.params.copy()
    params.W_ah = np.full(small_env.kg.dim, np.inf)
    with pytest.raises(ConfigurationError):
        _restore(small_env, params)


def test_malformed_snapshot_file(small_env, tmp_path):
    net = QNetwork.init(small_env.state_dim, 4, small_env.n_actions, np.random.default_rng(0))
    save_snapshots(tmp_path, small_env.profiles, small_env.kg, small_env.params, net, net)
    path = tmp_path / "kg" / "representation_params.tsv"
    path.write_text(path.read_text().replace("0x", "zz", 1))
    with pytest.raises(SchemaError):
        load_snapshots(tmp_path, small_env.schema)
