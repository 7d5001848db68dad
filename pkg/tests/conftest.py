"""
Shared fixtures: small synthetic worlds and environments built on them
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from corpus.mobility_data import TemporalContextIndex, build_temporal_context
from corpus.synthetic import SynthSpec, generate_synthetic, make_preferences
from services.environment import MobilityEnvironment
from services.reward import HashedCategoryVectors, RewardConfig
from services.trainer import TrainingCorpus


def make_world(n_users=3, n_pois=6, n_categories=2, n_events=60, rows=1, cols=2,
               concentration=0.8, seed=0):
    spec = SynthSpec(n_users=n_users, n_pois=n_pois, n_categories=n_categories,
                     n_events=n_events,
                     preferences=make_preferences(n_users, n_pois, concentration, seed),
                     grid_rows=rows, grid_cols=cols)
    return generate_synthetic(spec, seed)


def make_corpus(world, vector_dim=16):
    temporal = TemporalContextIndex(build_temporal_context(world.taxis, world.grid), world.grid.M)
    return TrainingCorpus(world.schema, world.catalog, temporal,
                          HashedCategoryVectors(vector_dim), world.events.user_ids())


def make_env(world, dim=4, seed=0, reward_cfg=None, pooling=False, tail_sigmoid=False):
    corpus = make_corpus(world)
    return MobilityEnvironment.create(corpus.schema, corpus.catalog, corpus.user_ids,
                                      corpus.temporal, corpus.vectors,
                                      reward_cfg or RewardConfig(), dim, seed, pooling,
                                      tail_sigmoid)


@pytest.fixture
def small_world():
    return make_world()


@pytest.fixture
def small_env(small_world):
    return make_env(small_world)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
