import numpy as np
from sklearn.utils import check_array

from .exceptions import InputError


def check_state(state, dim):
    """Return ``state`` as a finite 1-D float64 array of length ``dim``."""
    arr = np.asarray(state, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InputError(f"expected a state of length {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("state contains non-finite values")
    return arr


def check_states(X, dim):
    """Return a 2-D batch of states; a single state is promoted to one row."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    try:
        arr = check_array(arr, dtype=np.float64, ensure_min_samples=1)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if arr.shape[1] != dim:
        raise InputError(f"expected {dim} features, got {arr.shape[1]}")
    return arr


def check_action(action, action_count):
    if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
        raise InputError(f"action must be an integer index, got {action!r}")
    if not 0 <= int(action) < action_count:
        raise InputError(f"action {action} outside [0, {action_count})")
    return int(action)


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise InputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def sample_rng(seed, stream=0):
    """Independent generator for one (seed, sample index) pair."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
