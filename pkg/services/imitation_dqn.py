"""
Imitation Agent
One-hidden-layer Q-network in numpy, epsilon-greedy action selection,
Bellman training with a target network and prioritized experience replay
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.exceptions import (ConfigurationError, InsufficientDataError,
                                 NumericError, ShapeError)
from services.gating import softmax

logger = logging.getLogger(__name__)


class PriorityMode(Enum):
    REWARD = "r"
    TD = "td"


class SamplingMode(Enum):
    SOFTMAX = "softmax"
    TOPK = "topk"


@dataclass(frozen=True)
class DQNConfig:
    """Hyper-parameters of the imitation agent; epsilon is the GREEDY probability"""
    gamma: float = 0.94
    epsilon: float = 0.97
    batch_size: int = 32
    memory_capacity: int = 128
    target_replace_iter: int = 5
    lr2: float = 0.0001
    hidden: int = 64
    priority_mode: PriorityMode = PriorityMode.REWARD
    sampling: SamplingMode = SamplingMode.SOFTMAX

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.memory_capacity < self.batch_size:
            raise ConfigurationError("memory_capacity must be >= batch_size")
        if self.target_replace_iter < 1:
            raise ConfigurationError("target_replace_iter must be >= 1")
        if self.lr2 < 0:
            raise ConfigurationError("lr2 must be non-negative")
        if self.hidden < 1:
            raise ConfigurationError("hidden width must be >= 1")


# ============================================
# Q-NETWORK
# ============================================


LAYER_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class QNetwork:
    """Q(s, .) = W2 . relu(W1 . s + b1) + b2"""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, state_dim: int, hidden: int, n_actions: int,
             rng: np.random.Generator) -> "QNetwork":
        if n_actions < 1:
            raise ConfigurationError("Action space must hold at least one POI")
        return cls(W1=rng.normal(0.0, np.sqrt(2.0 / state_dim), (hidden, state_dim)),
                   b1=np.zeros(hidden),
                   W2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (n_actions, hidden)),
                   b2=np.zeros(n_actions))

    @property
    def state_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_actions(self) -> int:
        return self.W2.shape[0]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in LAYER_NAMES}

    def copy(self) -> "QNetwork":
        return QNetwork(*(getattr(self, name).copy() for name in LAYER_NAMES))

    def forward(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(q, hidden pre-activation); accepts one state or a (B, D) batch"""
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.state_dim:
            raise ShapeError(f"State has dimension {s.shape[-1]}, network expects {self.state_dim}")
        pre = s @ self.W1.T + self.b1
        q = np.maximum(pre, 0.0) @ self.W2.T + self.b2
        return q, pre

    def input_gradient(self, d_q: np.ndarray, pre: np.ndarray) -> np.ndarray:
        """dL/ds for one state given dL/dq"""
        return self.W1.T @ ((self.W2.T @ d_q) * (pre > 0))


def q_values(net: QNetwork, s) -> np.ndarray:
    """Forward pass for one state vector (or StateVector)"""
    q, _ = net.forward(getattr(s, "s", s))
    if not np.all(np.isfinite(q)):
        raise NumericError("Q-network produced non-finite values")
    return q


def select_action(net: QNetwork, s, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy with probability epsilon (ties to the smallest id), uniform otherwise"""
    if rng.random() < epsilon:
        return int(np.argmax(q_values(net, s)))
    return int(rng.integers(net.n_actions))


# ============================================
# REPLAY
# ============================================


@dataclass(eq=False)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    priority: float = 0.0


def td_error(net_eval: QNetwork, net_target: QNetwork, t: Transition, gamma: float) -> float:
    """r + gamma * max_a' Q_target(s', a') - Q_eval(s, a)"""
    q_next, _ = net_target.forward(t.s_next)
    q, _ = net_eval.forward(t.s)
    return float(t.r + gamma * np.max(q_next) - q[t.a])


def priority_score(mode: PriorityMode, t: Transition, net_eval: Optional[QNetwork] = None,
                   net_target: Optional[QNetwork] = None, gamma: float = 0.0) -> float:
    """Reward-based: the transition's reward; TD-based: |TD-error|"""
    if mode is PriorityMode.REWARD:
        return float(t.r)
    return abs(td_error(net_eval, net_target, t, gamma))


class ReplayBuffer:
    """FIFO ring of transitions with per-transition priorities"""

    def __init__(self, capacity: int, mode: PriorityMode = PriorityMode.REWARD):
        if capacity < 1:
            raise ConfigurationError("Replay capacity must be >= 1")
        self.capacity = capacity
        self.mode = mode
        self._items: Deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition):
        if not (np.isfinite(t.priority) and t.priority >= 0):
            raise NumericError(f"Invalid priority {t.priority}")
        self._items.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Transition:
        return self._items[index]

    def priorities(self) -> np.ndarray:
        return np.array([t.priority for t in self._items], dtype=float)

    def probabilities(self) -> np.ndarray:
        return softmax(self.priorities())


def sample_batch(buffer: ReplayBuffer, k: int, rng: np.random.Generator,
                 sampling: SamplingMode = SamplingMode.SOFTMAX) -> List[Tuple[int, Transition]]:
    """
    k distinct transitions drawn from softmax(priorities) without replacement

    Gumbel-top-k over the priorities as logits is distributed exactly like k
    sequential renormalized softmax draws. TOPK takes the k largest priorities.
    """
    n = len(buffer)
    if k > n or n == 0:
        raise InsufficientDataError(f"Cannot sample {k} transitions from a buffer of {n}")
    logits = buffer.priorities()
    if sampling is SamplingMode.SOFTMAX:
        logits = logits + rng.gumbel(size=n)
    order = np.argsort(-logits, kind="stable")[:k]
    return [(int(i), buffer[int(i)]) for i in order]


# ============================================
# TRAINING
# ============================================


def dqn_loss_and_grads(net_eval: QNetwork, net_target: QNetwork, batch: Sequence[Transition],
                       gamma: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean squared Bellman residual and its gradient w.r.t. the eval network"""
    if not batch:
        raise InsufficientDataError("Empty training batch")
    S = np.stack([t.s for t in batch])
    S_next = np.stack([t.s_next for t in batch])
    actions = np.array([t.a for t in batch])
    rewards = np.array([t.r for t in batch], dtype=float)
    q_next, _ = net_target.forward(S_next)
    targets = rewards + gamma * q_next.max(axis=1)
    q, pre = net_eval.forward(S)
    rows = np.arange(len(batch))
    residual = q[rows, actions] - targets
    loss = float(np.mean(residual ** 2))

    d_q = np.zeros_like(q)
    d_q[rows, actions] = 2.0 * residual / len(batch)
    hidden = np.maximum(pre, 0.0)
    d_pre = (d_q @ net_eval.W2) * (pre > 0)
    grads = {"W1": d_pre.T @ S, "b1": d_pre.sum(axis=0),
             "W2": d_q.T @ hidden, "b2": d_q.sum(axis=0)}
    return loss, grads


def train_step(net_eval: QNetwork, net_target: QNetwork, batch: Sequence[Transition],
               cfg: DQNConfig) -> float:
    """One SGD step on the eval network; returns the pre-update loss"""
    loss, grads = dqn_loss_and_grads(net_eval, net_target, batch, cfg.gamma)
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite DQN gradient in {name}")
        setattr(net_eval, name, getattr(net_eval, name) - cfg.lr2 * grad)
    return loss


def sync_target(net_eval: QNetwork, net_target: QNetwork, train_steps: int,
                target_replace_iter: int) -> bool:
    """Copy eval into target every target_replace_iter train steps"""
    if train_steps == 0 or train_steps % target_replace_iter:
        return False
    for name in LAYER_NAMES:
        setattr(net_target, name, getattr(net_eval, name).copy())
    return True


@dataclass
class DQNAgent:
    """Eval / target networks, replay buffer and step counters of one run"""
    config: DQNConfig
    eval_net: QNetwork
    target_net: QNetwork
    buffer: ReplayBuffer
    train_steps: int = 0
    syncs: List[int] = field(default_factory=list)

    @classmethod
    def create(cls, config: DQNConfig, state_dim: int, n_actions: int,
               rng: np.random.Generator) -> "DQNAgent":
        eval_net = QNetwork.init(state_dim, config.hidden, n_actions, rng)
        return cls(config, eval_net, eval_net.copy(),
                   ReplayBuffer(config.memory_capacity, config.priority_mode))

    def act(self, s, rng: np.random.Generator, epsilon: Optional[float] = None) -> int:
        return select_action(self.eval_net, s, self.config.epsilon if epsilon is None else epsilon, rng)

    def remember(self, s: np.ndarray, a: int, r: float, s_next: np.ndarray) -> Transition:
        t = Transition(s, a, r, s_next)
        t.priority = priority_score(self.config.priority_mode, t, self.eval_net,
                                    self.target_net, self.config.gamma)
        self.buffer.push(t)
        return t

    def learn(self, rng: np.random.Generator) -> Optional[float]:
        """Train on one sampled batch once the buffer holds batch_size transitions"""
        if len(self.buffer) < self.config.batch_size:
            return None
        sampled = sample_batch(self.buffer, self.config.batch_size, rng, self.config.sampling)
        loss = train_step(self.eval_net, self.target_net, [t for _, t in sampled], self.config)
        if self.config.priority_mode is PriorityMode.TD:
            for _, t in sampled:
                t.priority = priority_score(PriorityMode.TD, t, self.eval_net,
                                            self.target_net, self.config.gamma)
        self.train_steps += 1
        if sync_target(self.eval_net, self.target_net, self.train_steps,
                       self.config.target_replace_iter):
            self.syncs.append(self.train_steps)
        return loss
