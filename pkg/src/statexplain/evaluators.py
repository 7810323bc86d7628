"""Fidelity (AIM, AUM, PGI, PGU) and stability (RIS) metrics for attributions.

``model`` is anything exposing ``forward(X)`` returning Q-values (or margins)
for a batch of states. Per-sample randomness comes from
``sample_rng(config.seed, sample_index)``, so a metric's value for a sample
does not depend on which worker computed it.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_positive_int, sample_rng
from .exceptions import InputError
from .explainers import softmax_policy


class TopKMode(str, enum.Enum):
    BY_ABSOLUTE_VALUE = "by_absolute_value"
    BY_RAW_VALUE = "by_raw_value"


FIDELITY_METRICS = ("aim", "aum", "pgi", "pgu")
METRICS = FIDELITY_METRICS + ("ris",)
LOWER_IS_BETTER = frozenset({"aim", "pgu", "ris"})
DIRECTION_MARKERS = {"aim": "↓", "aum": "↑", "pgi": "↑", "pgu": "↓", "ris": "↓"}


@dataclass(frozen=True)
class FidelityConfig:
    reference_state: Optional[np.ndarray] = None  # None -> zeros
    feature_std: Optional[np.ndarray] = None  # None -> no PGI/PGU noise
    noise_scale: float = 0.1
    n_pert: int = 32
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_pert, "n_pert")
        if self.noise_scale < 0:
            raise InputError("noise_scale must be non-negative")

    def reference(self, d):
        return np.zeros(d) if self.reference_state is None else np.asarray(self.reference_state, dtype=np.float64)

    def sigma(self, d):
        if self.feature_std is None:
            return np.zeros(d)
        return self.noise_scale * np.asarray(self.feature_std, dtype=np.float64)


@dataclass(frozen=True)
class StabilityConfig:
    feature_std: Optional[np.ndarray] = None  # None -> unit std
    n_nbr: int = 32
    noise_scale: float = 0.05
    eps_min: float = 1e-4
    p: int = 2
    eps_den: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_nbr, "n_nbr")
        if not self.eps_min > 0:
            raise InputError("eps_min must be positive")
        if self.p not in (1, 2):
            raise InputError("p must be 1 or 2")
        if self.noise_scale < 0:
            raise InputError("noise_scale must be non-negative")

    def sigma(self, d):
        std = np.ones(d) if self.feature_std is None else np.asarray(self.feature_std, dtype=np.float64)
        return self.noise_scale * std


@dataclass(frozen=True)
class MetricCurve:
    metric: str
    mode: Optional[TopKMode]
    k_values: tuple
    values: tuple
    auc: float
    alternatives: dict = field(default_factory=dict, compare=False)

    @property
    def per_k(self):
        return dict(zip(self.k_values, self.values))


def _check_k(k, d):
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 0 <= k <= d:
        raise InputError(f"k must be an integer in [0, {d}], got {k!r}")
    return int(k)


def _keys(values, mode):
    values = np.asarray(values, dtype=np.float64)
    return np.abs(values) if TopKMode(mode) is TopKMode.BY_ABSOLUTE_VALUE else values


def top_k(values, k, mode):
    """Indices of the k largest keys, ties broken by lower index."""
    keys = _keys(values, mode)
    k = _check_k(k, keys.shape[0])
    order = np.lexsort((np.arange(keys.shape[0]), -keys))
    return [int(i) for i in order[:k]]


def bottom_k(values, k, mode):
    """Indices of the k smallest keys, ties broken by lower index."""
    keys = _keys(values, mode)
    k = _check_k(k, keys.shape[0])
    order = np.lexsort((np.arange(keys.shape[0]), keys))
    return [int(i) for i in order[:k]]


def select(values, k, mode, which):
    return top_k(values, k, mode) if which == "top" else bottom_k(values, k, mode)


def mask(state, indices, reference_state):
    out = np.array(state, dtype=np.float64)
    idx = list(indices)
    if idx:
        out[idx] = np.asarray(reference_state, dtype=np.float64)[idx]
    return out


def _as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def _post_hoc_accuracy(model, samples, attributions, k, mode, config, which):
    X = _as_matrix(samples)
    E = _as_matrix(attributions)
    if X.shape != E.shape or X.shape[0] < 1:
        raise InputError(f"samples {X.shape} and attributions {E.shape} must align")
    _check_k(k, X.shape[1])
    ref = config.reference(X.shape[1])
    masked = np.array([mask(x, select(e, k, mode, which), ref) for x, e in zip(X, E)])
    before = np.argmax(model.forward(X), axis=1)
    after = np.argmax(model.forward(masked), axis=1)
    return float(np.mean(before == after))


def aim(model, samples, attributions, k, mode, config=FidelityConfig()):
    """Decision agreement after masking the top-k features. Lower is better."""
    return _post_hoc_accuracy(model, samples, attributions, k, mode, config, "top")


def aum(model, samples, attributions, k, mode, config=FidelityConfig()):
    """Decision agreement after masking the bottom-k features. Higher is better."""
    return _post_hoc_accuracy(model, samples, attributions, k, mode, config, "bottom")


def _prediction_gap(model, x, attribution, k, mode, config, sample_index, which):
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    k = _check_k(k, d)
    if k < 1:
        raise InputError("k must be at least 1 for prediction-gap metrics")
    idx = select(attribution, k, mode, which)
    q = model.forward(x)
    target = int(np.argmax(q))
    p = softmax_policy(q)[target]
    # full-width draw keeps noise identical across k and top/bottom
    noise = sample_rng(config.seed, sample_index).standard_normal((config.n_pert, d)) * config.sigma(d)
    keep = np.zeros(d, dtype=bool)
    keep[idx] = True
    delta = noise * keep
    p_pert = softmax_policy(model.forward(x + delta))[:, target]
    # untouched rows must give exactly zero gap, whatever the BLAS batching does
    p_pert[~np.any(delta != 0, axis=1)] = p
    return float(np.mean(np.abs(p - p_pert)))


def pgi(model, x, attribution, k, mode, config=FidelityConfig(), sample_index=0):
    """Mean |f(x) - f(x')| with noise on the top-k features; f is the softmax
    probability of the unperturbed argmax action. Higher is better."""
    return _prediction_gap(model, x, attribution, k, mode, config, sample_index, "top")


def pgu(model, x, attribution, k, mode, config=FidelityConfig(), sample_index=0):
    """As :func:`pgi` with noise on the bottom-k features. Lower is better."""
    return _prediction_gap(model, x, attribution, k, mode, config, sample_index, "bottom")


def _pnorm(v, p):
    return float(np.sum(np.abs(v))) if p == 1 else float(np.sqrt(np.sum(v * v)))


def ris(explain_fn, model, x, config=StabilityConfig(), sample_index=0, e_x=None):
    """Relative input stability: the largest relative explanation change over
    prediction-preserving Gaussian neighbours, divided by the relative input change.

    Returns ``nan`` when no neighbour keeps the prediction (undefined outcome).
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    rng = sample_rng(config.seed, sample_index)
    neighbours = x + rng.standard_normal((config.n_nbr, d)) * config.sigma(d)
    target = int(np.argmax(model.forward(x)))
    kept = neighbours[np.argmax(model.forward(neighbours), axis=1) == target]
    if kept.shape[0] == 0:
        return math.nan
    e_x = np.asarray(explain_fn(x) if e_x is None else e_x, dtype=np.float64)
    e_den = np.maximum(np.abs(e_x), config.eps_den)
    x_den = np.maximum(np.abs(x), config.eps_den)
    worst = 0.0
    for xp in kept:
        num = _pnorm((e_x - np.asarray(explain_fn(xp), dtype=np.float64)) / e_den, config.p)
        den = max(_pnorm((x - xp) / x_den, config.p), config.eps_min)
        worst = max(worst, num / den)
    return worst


def _better(metric, a, b):
    return a < b if metric in LOWER_IS_BETTER else a > b


def curve_and_auc(metric_fn, k_range, metric, modes=tuple(TopKMode)):
    """Evaluate ``metric_fn(k, mode)`` on every k, average into an AUC, and
    keep the better of the two top-K definitions (first mode on ties)."""
    ks = [int(k) for k in k_range]
    if not ks:
        raise InputError("k_range must be non-empty")
    best = None
    alternatives = {}
    for mode in modes:
        mode = TopKMode(mode)
        values = tuple(float(metric_fn(k, mode)) for k in ks)
        auc = float(np.mean(values))
        alternatives[mode.value] = auc
        if best is None or _better(metric, auc, best[2]):
            best = (mode, values, auc)
    mode, values, auc = best
    return MetricCurve(metric, mode, tuple(ks), values, auc, alternatives)
