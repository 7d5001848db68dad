"""
Trainer
Closed loop over training events: observe, act, reward, replay, DQN update,
adversarial representation update, then the real user/KG updates
"""

import logging
from dataclasses import dataclass, field
from typing import IO, Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from corpus.mobility_data import (EventSequence, KGSchema, PoiCatalog,
                                  TemporalContextIndex)
from services.environment import MobilityEnvironment
from services.exceptions import (ConfigurationError, NumericError, RIRLError,
                                 TrainingStepError)
from services.imitation_dqn import DQNAgent, DQNConfig
from services.representation import (representation_step, surrogate_loss,
                                     surrogate_loss_and_grad)
from services.reward import CategoryVectors, RewardConfig, compute_reward

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "action", "r_d", "r_c", "r_p", "r", "dqn_loss", "repr_loss")


@dataclass(frozen=True)
class TrainerConfig:
    """Run-level settings; lr1 = 0 disables the representation update"""
    dim: int = 200
    lr1: float = 0.001
    tau: float = 1.0
    epochs: int = 1
    seed: int = 0
    state_pooling: bool = False
    tail_sigmoid: bool = False
    reward: RewardConfig = field(default_factory=RewardConfig)
    dqn: DQNConfig = field(default_factory=DQNConfig)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"Embedding dimension must be >= 1, got {self.dim}")
        if self.lr1 < 0 or not np.isfinite(self.lr1):
            raise ConfigurationError(f"lr1 must be a finite non-negative number, got {self.lr1}")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")


class TrainingCorpus(NamedTuple):
    """Static inputs shared by training and evaluation"""
    schema: KGSchema
    catalog: PoiCatalog
    temporal: TemporalContextIndex
    vectors: CategoryVectors
    user_ids: Sequence[str]


@dataclass(frozen=True)
class TrainingLogRecord:
    step: int
    action: int
    r_d: float
    r_c: float
    r_p: float
    r: float
    dqn_loss: Optional[float]
    repr_loss: float

    def to_line(self) -> str:
        values = [str(self.step), str(self.action)]
        for value in (self.r_d, self.r_c, self.r_p, self.r, self.dqn_loss, self.repr_loss):
            values.append("-" if value is None else repr(float(value)))
        return "\t".join(values)


@dataclass
class TrainingResult:
    env: MobilityEnvironment
    agent: DQNAgent
    log: List[TrainingLogRecord]
    aborted_steps: int = 0

    def mean_reward(self, start: int, stop: Optional[int] = None) -> float:
        window = self.log[start:stop]
        return float(np.mean([rec.r for rec in window])) if window else 0.0


def write_training_log(records: Sequence[TrainingLogRecord], stream: IO[str]):
    stream.write("\t".join(LOG_FIELDS) + "\n")
    for rec in records:
        stream.write(rec.to_line() + "\n")


def write_group_training_logs(groups: Sequence[Tuple[str, Sequence[TrainingLogRecord]]],
                              stream: IO[str]):
    """Several runs in one file, each line led by its group label"""
    stream.write("\t".join(("group",) + LOG_FIELDS) + "\n")
    for label, records in groups:
        for rec in records:
            stream.write(f"{label}\t{rec.to_line()}\n")


def build_environment(cfg: TrainerConfig, corpus: TrainingCorpus) -> MobilityEnvironment:
    return MobilityEnvironment.create(corpus.schema, corpus.catalog, corpus.user_ids,
                                      corpus.temporal, corpus.vectors, cfg.reward, cfg.dim,
                                      cfg.seed, cfg.state_pooling, cfg.tail_sigmoid)


def run_training(cfg: TrainerConfig, train: EventSequence, corpus: TrainingCorpus,
                 on_step: Optional[Callable[[MobilityEnvironment, TrainingLogRecord], None]] = None
                 ) -> TrainingResult:
    """
    Train profiles, KG and agent on the events of train, in order

    Every random draw comes from generators seeded off cfg.seed, so the
    config, seed and data fully determine the result.
    """
    env = build_environment(cfg, corpus)
    agent = DQNAgent.create(cfg.dqn, env.state_dim, env.n_actions,
                            np.random.default_rng(cfg.seed + 3))
    rng = np.random.default_rng(cfg.seed + 4)
    result = TrainingResult(env, agent, [])
    logger.info(f"Training on {len(train)} events x {cfg.epochs} epochs, "
                f"{env.n_actions} actions, N={cfg.dim}, lr1={cfg.lr1}")

    step = 0
    for epoch in range(cfg.epochs):
        for event in train:
            try:
                record = _train_event(cfg, env, agent, rng, event, step, result)
            except TrainingStepError:
                raise
            except RIRLError as e:
                raise TrainingStepError(step, event.user_id, e) from e
            result.log.append(record)
            if on_step is not None:
                on_step(env, record)
            step += 1
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs} done, mean reward "
                    f"{result.mean_reward(-len(train)):.4f}")

    if result.aborted_steps:
        logger.warning(f"{result.aborted_steps} representation steps aborted on non-finite gradients")
    return result


def _train_event(cfg: TrainerConfig, env: MobilityEnvironment, agent: DQNAgent,
                 rng: np.random.Generator, event, step: int,
                 result: TrainingResult) -> TrainingLogRecord:
    obs = env.observe(event)
    action = agent.act(obs.state, rng)

    r_d, r_c, r_p = env.reward_components(event)
    per_action = env.per_action_rewards(event)
    breakdown = compute_reward(cfg.reward, env.windows, r_d[action], r_c[action], r_p[action])

    # s' keeps this window's T~: the user's next event, and so its window, is not known yet
    s_next = env.preview_next(event, obs)
    agent.remember(obs.state.s, action, breakdown.r, s_next)
    dqn_loss = agent.learn(rng)

    if cfg.lr1 > 0:
        repr_loss, grads = surrogate_loss_and_grad(env.params, obs.provenance, agent.eval_net,
                                                   per_action, cfg.tau)
        try:
            env.params = representation_step(env.params, grads, cfg.lr1)
        except NumericError as e:
            result.aborted_steps += 1
            logger.warning(f"Representation step {step} aborted: {e}")
    else:
        repr_loss = surrogate_loss(env.params, obs.provenance, agent.eval_net, per_action, cfg.tau)

    env.commit(event, obs.T)
    return TrainingLogRecord(step, action, breakdown.r_d, breakdown.r_c, breakdown.r_p,
                             breakdown.r, dqn_loss, repr_loss)
