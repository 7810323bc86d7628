"""Desk-scale DQN: uniform replay, epsilon-greedy exploration, periodic target sync."""

import logging
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import InputError, TrainingError
from .policy import MlpPolicy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DqnConfig:
    replay_capacity: int = 50_000
    batch_size: int = 64
    gamma: float = 0.99
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 10_000
    target_sync_interval: int = 500
    learning_starts: int = 1_000
    max_steps: int = 200_000
    solve_threshold: Optional[float] = 195.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InputError("gamma must lie in (0, 1]")
        for name in ("replay_capacity", "batch_size", "target_sync_interval", "epsilon_decay_steps"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")
        if self.max_steps < 0 or self.learning_starts < 0:
            raise InputError("max_steps and learning_starts must be non-negative")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")

    def epsilon(self, step):
        frac = min(step / self.epsilon_decay_steps, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class TrainingResult(NamedTuple):
    policy: MlpPolicy
    trailing_mean: float
    steps: int
    episodes: int


class _Replay:
    def __init__(self, capacity, state_dim):
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity)
        self.capacity = capacity
        self.size = 0
        self.pos = 0

    def add(self, s, a, r, s2, terminal):
        i = self.pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.terminals[i] = terminal
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, n):
        idx = rng.integers(0, self.size, size=n)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx]


def _forward(params, X):
    W1, b1, W2, b2, W3, b3 = params
    z1 = X @ W1.T + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ W2.T + b2
    h2 = np.maximum(z2, 0.0)
    return (z1, h1, z2, h2), h2 @ W3.T + b3


def _td_step(params, target, batch, gamma, lr):
    """One SGD step on 0.5 * mean squared TD error; returns the loss."""
    s, a, r, s2, term = batch
    n = s.shape[0]
    _, q_next = _forward(target, s2)
    y = r + gamma * (1.0 - term) * q_next.max(axis=1)
    (z1, h1, z2, h2), q = _forward(params, s)
    rows = np.arange(n)
    delta = q[rows, a] - y
    loss = 0.5 * float(np.mean(delta**2))

    W1, b1, W2, b2, W3, b3 = params
    dq = np.zeros_like(q)
    dq[rows, a] = delta / n
    gW3 = dq.T @ h2
    gb3 = dq.sum(axis=0)
    dz2 = (dq @ W3) * (z2 > 0.0)
    gW2 = dz2.T @ h1
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ W2) * (z1 > 0.0)
    gW1 = dz1.T @ s
    gb1 = dz1.sum(axis=0)
    for p, g in zip(params, (gW1, gb1, gW2, gb2, gW3, gb3)):
        p -= lr * g
    return loss


def train_dqn(env, config):
    """Train a Q-network on ``env`` until the trailing-100 mean return reaches
    ``config.solve_threshold`` or ``config.max_steps`` environment steps elapse.

    Fully deterministic for a fixed config.
    """
    spec = env.spec
    rng = np.random.default_rng(config.seed)
    init = MlpPolicy.random(spec.state_dim, spec.action_count, seed=rng.integers(2**63))
    if config.max_steps == 0:
        return TrainingResult(init, float("nan"), 0, 0)

    params = [p.copy() for p in init.parameters()]
    target = [p.copy() for p in params]
    replay = _Replay(config.replay_capacity, spec.state_dim)
    returns = deque(maxlen=100)
    episodes = 0
    ep_return = 0.0
    state = env.reset(seed=rng.integers(2**63))
    trailing = float("nan")

    for step in range(1, config.max_steps + 1):
        if rng.random() < config.epsilon(step):
            action = int(rng.integers(spec.action_count))
        else:
            _, q = _forward(params, state[None, :])
            action = int(np.argmax(q[0]))
        outcome = env.step(action)
        replay.add(state, action, outcome.reward, outcome.next_state, outcome.terminal)
        ep_return += outcome.reward
        state = outcome.next_state

        if outcome.done:
            episodes += 1
            returns.append(ep_return)
            ep_return = 0.0
            state = env.reset(seed=rng.integers(2**63))
            if len(returns) == returns.maxlen:
                trailing = float(np.mean(returns))
            if episodes % 50 == 0:
                log.info("step %d episode %d trailing-100 mean %.1f", step, episodes, trailing)
            if config.solve_threshold is not None and trailing >= config.solve_threshold:
                break

        if step >= config.learning_starts and replay.size >= config.batch_size:
            loss = _td_step(params, target, replay.sample(rng, config.batch_size), config.gamma, config.learning_rate)
            if not np.isfinite(loss):
                raise TrainingError("non-finite TD loss", step)
        if step % config.target_sync_interval == 0:
            target = [p.copy() for p in params]

    if len(returns) and np.isnan(trailing):
        trailing = float(np.mean(returns))
    return TrainingResult(MlpPolicy(params[0::2], params[1::2]), trailing, step, episodes)
