#!/usr/bin/env python3
"""
Gradient Verification
Finite-difference check of the DQN and representation gradients over a grid
of embedding sizes, zone counts and action counts

Usage:
    python scripts/verify_gradients.py [--tolerance 1e-4] [--seed 0]
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Sequence, Tuple

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from corpus.mobility_data import (TemporalContextIndex,
                                  build_temporal_context)
from corpus.synthetic import SynthSpec, generate_synthetic, make_preferences
from services.environment import MobilityEnvironment, Observation
from services.imitation_dqn import (LAYER_NAMES, QNetwork, Transition,
                                    dqn_loss_and_grads)
from services.representation import (GradCheckReport, flat_loss_fn,
                                     grad_check, surrogate_loss_and_grad)
from services.reward import HashedCategoryVectors, RewardConfig
from scripts.setup_logging import setup_run_logging

logger = logging.getLogger(__name__)

GRID_SHAPES = {2: (1, 2), 4: (2, 2)}
DEFAULT_GRID = ((2, 4, 8), (2, 4), (3, 10))
HIDDEN = 8
CHECK_FLOOR = 1e-4


@dataclass
class GradientProbe:
    """An environment with history, one observation of it and a Q-network"""
    env: MobilityEnvironment
    obs: Observation
    net: QNetwork
    per_action: np.ndarray


def build_probe(N: int, M: int, n_actions: int, seed: int = 0, warmup: int = 12,
                pooling: bool = False, tail_sigmoid: bool = False) -> GradientProbe:
    """
    Small synthetic environment after `warmup` committed visits, observed
    at the next event so that user and head slots carry provenance
    """
    rows, cols = GRID_SHAPES.get(M, (1, M))
    n_categories = min(3, n_actions)
    spec = SynthSpec(n_users=2, n_pois=n_actions, n_categories=n_categories,
                     n_events=warmup + 1,
                     preferences=make_preferences(2, n_actions, 0.8, seed),
                     grid_rows=rows, grid_cols=cols)
    world = generate_synthetic(spec, seed)
    temporal = TemporalContextIndex(build_temporal_context(world.taxis, world.grid), world.grid.M)
    env = MobilityEnvironment.create(world.schema, world.catalog, world.events.user_ids(),
                                     temporal, HashedCategoryVectors(16, seed=seed),
                                     RewardConfig(), N, seed, pooling, tail_sigmoid)
    events = list(world.events)
    for event in events[:-1]:
        obs = env.observe(event)
        env.commit(event, obs.T)
    rng = np.random.default_rng(seed + 100)
    net = QNetwork.init(env.state_dim, HIDDEN, env.n_actions, rng)
    return GradientProbe(env, env.observe(events[-1]), net, rng.random(env.n_actions))


def check_representation(probe: GradientProbe, tau: float = 1.0,
                         tolerance: float = 1e-4) -> GradCheckReport:
    params = probe.env.params
    _, grads = surrogate_loss_and_grad(params, probe.obs.provenance, probe.net,
                                       probe.per_action, tau)
    loss_fn = flat_loss_fn(params, probe.obs.provenance, probe.net, probe.per_action, tau)
    return grad_check(loss_fn, params.flatten(), grads.flatten(), tolerance, floor=CHECK_FLOOR)


def random_batch(state_dim: int, n_actions: int, size: int,
                 rng: np.random.Generator) -> List[Transition]:
    return [Transition(rng.normal(size=state_dim), int(rng.integers(n_actions)),
                       float(rng.random()), rng.normal(size=state_dim))
            for _ in range(size)]


def _flatten_net(net: QNetwork) -> np.ndarray:
    return np.concatenate([np.ravel(getattr(net, name)) for name in LAYER_NAMES])


def _unflatten_net(flat: np.ndarray, like: QNetwork) -> QNetwork:
    arrays, offset = [], 0
    for name in LAYER_NAMES:
        shape = getattr(like, name).shape
        size = int(np.prod(shape))
        arrays.append(flat[offset:offset + size].reshape(shape))
        offset += size
    return QNetwork(*arrays)


def check_dqn(state_dim: int, n_actions: int, seed: int = 0, gamma: float = 0.9,
              batch_size: int = 4, tolerance: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    net_eval = QNetwork.init(state_dim, HIDDEN, n_actions, rng)
    net_target = QNetwork.init(state_dim, HIDDEN, n_actions, rng)
    batch = random_batch(state_dim, n_actions, batch_size, rng)
    _, grads = dqn_loss_and_grads(net_eval, net_target, batch, gamma)
    analytic = np.concatenate([np.ravel(grads[name]) for name in LAYER_NAMES])

    def loss_fn(flat: np.ndarray) -> float:
        loss, _ = dqn_loss_and_grads(_unflatten_net(flat, net_eval), net_target, batch, gamma)
        return loss

    return grad_check(loss_fn, _flatten_net(net_eval), analytic, tolerance, floor=CHECK_FLOOR)


def run_grid(dims: Sequence[int], zones: Sequence[int], actions: Sequence[int], seed: int,
             tolerance: float) -> List[Tuple[Tuple[int, int, int], Dict[str, GradCheckReport]]]:
    results = []
    for N, M, A in product(dims, zones, actions):
        probe = build_probe(N, M, A, seed)
        reports = {"dqn": check_dqn(probe.env.state_dim, A, seed, tolerance=tolerance),
                   "representation": check_representation(probe, tolerance=tolerance)}
        results.append(((N, M, A), reports))
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Finite-difference gradient verification")
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    setup_run_logging()

    failures = 0
    print(f"{'N':>3} {'M':>3} {'|A|':>4}  {'dqn':>12}  {'representation':>14}")
    for (N, M, A), reports in run_grid(*DEFAULT_GRID, args.seed, args.tolerance):
        cells = []
        for report in reports.values():
            cells.append(f"{report.max_rel_error:.1e} {'ok' if report.passed else 'FAIL'}")
            failures += not report.passed
        print(f"{N:>3} {M:>3} {A:>4}  {cells[0]:>12}  {cells[1]:>14}")

    if failures:
        logger.error(f"{failures} gradient checks failed")
        return 1
    logger.info("All gradient checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
