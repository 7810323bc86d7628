"""State-action interaction datasets and their CSV interchange format."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._validation import check_positive_int
from .envs import EnvSpec
from .exceptions import FormatError, InputError


class SAPair(NamedTuple):
    state: np.ndarray
    action: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered (state, action) pairs with population mean/std per feature."""

    spec: EnvSpec
    states: np.ndarray = field(repr=False)
    actions: np.ndarray = field(repr=False)
    feature_mean: np.ndarray = field(init=False, repr=False)
    feature_std: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64).reshape(-1, self.spec.state_dim)
        actions = np.array(self.actions, dtype=np.int64).reshape(-1)
        if states.shape[0] != actions.shape[0]:
            raise InputError("states and actions must have the same length")
        if states.shape[0] < 1:
            raise InputError("a dataset needs at least one pair")
        if not np.all(np.isfinite(states)):
            raise InputError("dataset states must be finite")
        if actions.min() < 0 or actions.max() >= self.spec.action_count:
            raise InputError("dataset action out of range")
        mean = states.mean(axis=0)
        std = states.std(axis=0)
        # exact zero for constant columns
        std[np.all(states == states[0], axis=0)] = 0.0
        for name, arr in (("states", states), ("actions", actions), ("feature_mean", mean), ("feature_std", std)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i):
        return SAPair(self.states[i], int(self.actions[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.states.tobytes() == other.states.tobytes()
            and np.array_equal(self.actions, other.actions)
        )

    __hash__ = None

    def take(self, indices):
        return Dataset(self.spec, self.states[indices], self.actions[indices])


def collect(env, policy, episodes, max_steps, seed):
    """Roll out the greedy policy, recording every state before it is stepped."""
    spec = env.spec
    if (policy.state_dim, policy.action_count) != (spec.state_dim, spec.action_count):
        raise InputError("policy dimensions do not match the environment")
    check_positive_int(episodes, "episodes")
    check_positive_int(max_steps, "max_steps")
    rng = np.random.default_rng(seed)
    states, actions = [], []
    for _ in range(episodes):
        state = env.reset(seed=rng.integers(2**63))
        for _ in range(max_steps):
            action = policy.act_greedy(state)
            states.append(state)
            actions.append(action)
            outcome = env.step(action)
            if outcome.done:
                break
            state = outcome.next_state
    return Dataset(spec, np.array(states), np.array(actions))


def csv_header(spec):
    return [f"state_{i}" for i in range(spec.state_dim)] + ["action"]


def write_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(dataset.spec))
        for state, action in dataset:
            writer.writerow([repr(float(v)) for v in state] + [str(action)])


def read_csv(path, spec):
    """Parse a dataset file; errors carry the 1-based line number."""
    expected = csv_header(spec)
    states, actions = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if row != expected:
                    raise FormatError(
                        f"line 1: header {row!r} does not match expected {len(expected)} columns {expected!r}"
                    )
                continue
            if len(row) != len(expected):
                raise FormatError(f"line {lineno}: expected {len(expected)} columns, got {len(row)}")
            try:
                state = [float(v) for v in row[:-1]]
                action = int(row[-1])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: unparsable cell ({exc})") from None
            if not 0 <= action < spec.action_count:
                raise FormatError(f"line {lineno}: action {action} out of range")
            if not np.all(np.isfinite(state)):
                raise FormatError(f"line {lineno}: non-finite state value")
            states.append(state)
            actions.append(action)
    if not actions:
        raise FormatError(f"{Path(path).name}: no data rows")
    return Dataset(spec, np.array(states), np.array(actions))


def subsample_indices(n_rows, n, seed):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or not 1 <= n <= n_rows:
        raise InputError(f"sample size {n!r} outside [1, {n_rows}]")
    return np.random.default_rng(seed).choice(n_rows, size=int(n), replace=False)


def subsample(dataset, n, seed):
    """Uniform sample without replacement; statistics are recomputed."""
    return dataset.take(subsample_indices(len(dataset), n, seed))

