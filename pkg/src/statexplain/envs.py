"""Deterministic tabular-state environments.

Three environments are registered by name:

``cartpole``
    Classic cart-pole balancing with Euler integration.
``flappybird-lite``
    Integer-dynamics side scroller with a 12-feature state.
``synthetic-linear``
    I.i.d. Gaussian states scored by a planted linear model with known
    per-feature importances. Used to validate explainers and metrics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_action, check_state, check_states
from .exceptions import InputError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_count: int
    feature_names: tuple
    reference_state: tuple = None
    max_episode_steps: int = 500

    def __post_init__(self):
        if self.state_dim < 1:
            raise InputError("state_dim must be positive")
        if self.action_count < 2:
            raise InputError("action_count must be at least 2")
        if len(self.feature_names) != self.state_dim:
            raise InputError("feature_names length must equal state_dim")
        if self.reference_state is None:
            object.__setattr__(self, "reference_state", (0.0,) * self.state_dim)
        if len(self.reference_state) != self.state_dim:
            raise InputError("reference_state length must equal state_dim")

    @property
    def reference(self):
        return np.asarray(self.reference_state, dtype=np.float64)


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    terminal: bool
    truncated: bool = False

    @property
    def done(self):
        return self.terminal or self.truncated


CARTPOLE = EnvSpec(
    name="cartpole",
    state_dim=4,
    action_count=2,
    feature_names=("cart_position", "cart_velocity", "pole_angle", "pole_angular_velocity"),
    max_episode_steps=500,
)

FLAPPYBIRD_LITE = EnvSpec(
    name="flappybird-lite",
    state_dim=12,
    action_count=2,
    feature_names=(
        "bird_y", "bird_velocity",
        "pipe1_dx", "pipe1_gap_top", "pipe1_gap_bottom",
        "pipe2_dx", "pipe2_gap_top", "pipe2_gap_bottom",
        "pipe3_dx", "pipe3_gap_top", "pipe3_gap_bottom",
        "steps_since_flap",
    ),
    max_episode_steps=1000,
)

SYNTHETIC_LINEAR = EnvSpec(
    name="synthetic-linear",
    state_dim=8,
    action_count=3,
    feature_names=tuple(f"x{i}" for i in range(8)),
    max_episode_steps=100,
)

ENV_SPECS = {spec.name: spec for spec in (CARTPOLE, FLAPPYBIRD_LITE, SYNTHETIC_LINEAR)}

# Row magnitudes decay steeply so feature 0 dominates the decision.
PLANTED_WEIGHTS = np.array(
    [
        [2.0, 0.04, -0.03, 0.02, -0.015, 0.01, -0.005, 0.0025],
        [-2.0, 0.04, 0.03, -0.02, -0.015, 0.01, 0.005, -0.0025],
        [1.0, -0.04, 0.03, 0.02, 0.015, -0.01, 0.005, 0.0025],
    ]
)
PLANTED_WEIGHTS.setflags(write=False)


def get_spec(name):
    try:
        return ENV_SPECS[name]
    except KeyError:
        raise InputError(f"unknown environment {name!r}; choose from {sorted(ENV_SPECS)}") from None


class _Env:
    spec = None

    def __init__(self):
        self._state = None
        self._terminal = False
        self._steps = 0

    @property
    def state(self):
        if self._state is None:
            raise InputError("environment has not been reset")
        return self._state.copy()

    def set_state(self, values):
        """Overwrite the current state (test and analysis hook)."""
        self._state = check_state(values, self.spec.state_dim).copy()
        self._terminal = False

    def reset(self, seed):
        self._rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._terminal = False
        self._steps = 0
        self._state = self._initial_state()
        return self.state

    def step(self, action):
        action = check_action(action, self.spec.action_count)
        if self._state is None:
            raise InputError("environment has not been reset")
        if self._terminal:
            raise InputError("cannot step a terminal environment; call reset")
        next_state, reward, terminal = self._advance(action)
        if not np.all(np.isfinite(next_state)):
            raise InputError("environment produced a non-finite state")
        self._state = next_state
        self._terminal = terminal
        self._steps += 1
        truncated = not terminal and self._steps >= self.spec.max_episode_steps
        return StepOutcome(next_state.copy(), float(reward), bool(terminal), truncated)


class CartPole(_Env):
    spec = CARTPOLE

    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    force_mag = 10.0
    tau = 0.02
    x_threshold = 2.4
    theta_threshold = 12 * 2 * math.pi / 360

    def _initial_state(self):
        return self._rng.uniform(-0.05, 0.05, size=4)

    def _advance(self, action):
        x, x_dot, theta, theta_dot = (float(v) for v in self._state)
        force = self.force_mag if action == 1 else -self.force_mag
        total_mass = self.cart_mass + self.pole_mass
        polemass_length = self.pole_mass * self.half_length
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        terminal = abs(x) > self.x_threshold or abs(theta) > self.theta_threshold
        return np.array([x, x_dot, theta, theta_dot]), 0.0 if terminal else 1.0, terminal


class FlappyBirdLite(_Env):
    """Side scroller on an integer grid.

    The bird sits at x = 0. Gravity lowers the vertical velocity by one unit
    per step and a flap sets it to +5. Pipes approach at 3 units per step.
    The episode ends when the bird leaves ``[0, height]`` or overlaps a pipe
    outside its gap.
    """

    spec = FLAPPYBIRD_LITE

    height = 100
    gravity = 1
    flap_velocity = 5
    scroll_speed = 3
    pipe_spacing = 60
    pipe_width = 6
    gap_size = 30
    first_pipe_dx = 60

    def _initial_state(self):
        self._y = self.height // 2
        self._vy = 0
        self._since_flap = 0
        self._pipes = []
        for i in range(3):
            self._pipes.append([self.first_pipe_dx + i * self.pipe_spacing, *self._new_gap()])
        return self._observe()

    def _new_gap(self):
        bottom = int(self._rng.integers(10, self.height - 10 - self.gap_size + 1))
        return bottom + self.gap_size, bottom

    def _observe(self):
        values = [self._y, self._vy]
        for dx, top, bottom in self._pipes:
            values.extend((dx, top, bottom))
        values.append(self._since_flap)
        return np.array(values, dtype=np.float64)

    def set_state(self, values):
        state = check_state(values, self.spec.state_dim)
        self._y, self._vy = int(state[0]), int(state[1])
        self._pipes = [[int(v) for v in state[2 + 3 * i:5 + 3 * i]] for i in range(3)]
        self._since_flap = int(state[11])
        super().set_state(state)

    def _advance(self, action):
        if action == 1:
            self._vy = self.flap_velocity
            self._since_flap = 0
        else:
            self._vy -= self.gravity
            self._since_flap += 1
        self._y += self._vy
        for pipe in self._pipes:
            pipe[0] -= self.scroll_speed
        if self._pipes[0][0] < -self.pipe_width:
            self._pipes.pop(0)
            self._pipes.append([self._pipes[-1][0] + self.pipe_spacing, *self._new_gap()])
        terminal = self._y < 0 or self._y > self.height
        for dx, top, bottom in self._pipes:
            if -self.pipe_width <= dx <= 0 and not bottom <= self._y <= top:
                terminal = True
        return self._observe(), 0.0 if terminal else 1.0, terminal


@dataclass(frozen=True)
class LinearScorer:
    """Q(s) = W s, exposing the same surface as :class:`~statexplain.policy.MlpPolicy`."""

    weights: np.ndarray = field(repr=False)

    @property
    def state_dim(self):
        return self.weights.shape[1]

    @property
    def action_count(self):
        return self.weights.shape[0]

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        out = check_states(X, self.state_dim) @ self.weights.T
        return out[0] if single else out

    def input_gradient(self, X, action):
        action = check_action(action, self.action_count)
        X = np.asarray(X, dtype=np.float64)
        batch = check_states(X, self.state_dim)
        grads = np.broadcast_to(self.weights[action], batch.shape).copy()
        return grads[0] if X.ndim == 1 else grads

    def act_greedy(self, state):
        return int(np.argmax(self.forward(check_state(state, self.state_dim))))

    def importance(self, state, action):
        """Ground-truth importance |W[a, i] * s_i|."""
        state = check_state(state, self.state_dim)
        return np.abs(self.weights[check_action(action, self.action_count)] * state)


class SyntheticLinear(_Env):
    """Fresh standard-normal state every step; reward is the chosen action's planted score."""

    spec = SYNTHETIC_LINEAR

    def _initial_state(self):
        return self._rng.standard_normal(self.spec.state_dim)

    def _advance(self, action):
        reward = float(PLANTED_WEIGHTS[action] @ self._state)
        return self._rng.standard_normal(self.spec.state_dim), reward, False


_ENV_CLASSES = {"cartpole": CartPole, "flappybird-lite": FlappyBirdLite, "synthetic-linear": SyntheticLinear}


def make_env(name):
    get_spec(name)
    return _ENV_CLASSES[name]()


def planted_truth_model(spec=SYNTHETIC_LINEAR):
    """Return the planted linear scorer and its weight matrix."""
    if spec.name != SYNTHETIC_LINEAR.name:
        raise InputError("planted truth exists only for the synthetic-linear environment")
    return LinearScorer(PLANTED_WEIGHTS), PLANTED_WEIGHTS
