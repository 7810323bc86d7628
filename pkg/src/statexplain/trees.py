"""Gradient-boosted regression trees with exact path-dependent TreeSHAP.

The student model is a one-vs-rest logistic booster: each action owns an
additive ensemble whose margin is ``base_score[a] + eta * sum(tree(x))``.
:func:`tree_shap` computes exact Shapley values of that margin in time
polynomial in tree depth. :func:`brute_shapley` enumerates all feature
subsets and serves as the reference oracle.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from ._validation import check_action, check_positive_int, check_state, check_states
from .exceptions import DegenerateLabelWarning, InputError, ModelIntegrityError, ResourceError

LEAF = -1
BRUTE_FORCE_MAX_FEATURES = 15


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary tree stored as parallel node arrays; node 0 is the root.

    Samples with ``x[feature] <= threshold`` go left. Leaves have
    ``feature == -1`` and children ``-1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    _lists: tuple = field(init=False, repr=False)
    depth: int = field(init=False)

    def __post_init__(self):
        arrays = {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=np.float64),
            "cover": np.asarray(self.cover, dtype=np.float64),
        }
        n = arrays["feature"].shape[0]
        if n < 1 or any(a.shape != (n,) for a in arrays.values()):
            raise ModelIntegrityError("tree arrays must be non-empty and equally long")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()
        object.__setattr__(self, "_lists", tuple(a.tolist() for a in arrays.values()))
        object.__setattr__(self, "depth", self._depth(0))

    @classmethod
    def leaf(cls, value, cover=1.0):
        return cls([LEAF], [0.0], [LEAF], [LEAF], [value], [cover])

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def is_leaf(self, j):
        return self.feature[j] == LEAF

    def _validate(self):
        n = self.n_nodes
        if self.cover[0] < 1:
            raise ModelIntegrityError("root cover must be at least 1")
        for j in range(n):
            f, lo, hi = self.feature[j], self.left[j], self.right[j]
            if f == LEAF:
                if lo != LEAF or hi != LEAF:
                    raise ModelIntegrityError(f"leaf {j} has children")
                if not np.isfinite(self.value[j]):
                    raise ModelIntegrityError(f"leaf {j} has a non-finite value")
                continue
            if f < 0 or not (0 < lo < n and 0 < hi < n):
                raise ModelIntegrityError(f"internal node {j} has invalid feature or children")
            if self.cover[j] <= 0:
                raise ModelIntegrityError(f"internal node {j} has zero cover")
            if not math.isclose(self.cover[j], self.cover[lo] + self.cover[hi], rel_tol=1e-12):
                raise ModelIntegrityError(f"node {j}: cover does not equal the sum of its children")

    def _depth(self, j):
        if self.feature[j] == LEAF:
            return 0
        return 1 + max(self._depth(self.left[j]), self._depth(self.right[j]))

    def predict(self, X):
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f != LEAF
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    def expected_value(self):
        """Cover-weighted mean leaf value."""
        feature, _, left, right, value, cover = self._lists

        def rec(j):
            if feature[j] == LEAF:
                return value[j]
            lo, hi = left[j], right[j]
            return (cover[lo] * rec(lo) + cover[hi] * rec(hi)) / cover[j]

        return rec(0)

    def max_feature(self):
        return int(self.feature.max())


@dataclass(frozen=True, eq=False)
class GbdtModel:
    trees: tuple  # trees[a] is the ensemble for action a
    learning_rate: float
    base_score: np.ndarray
    n_features: int

    def __post_init__(self):
        trees = tuple(tuple(ens) for ens in self.trees)
        base = np.asarray(self.base_score, dtype=np.float64)
        if len(trees) < 2 or base.shape != (len(trees),):
            raise ModelIntegrityError("need one ensemble and one base score per action (at least 2)")
        if any(len(ens) < 1 for ens in trees):
            raise ModelIntegrityError("every action needs at least one tree")
        for ens in trees:
            for tree in ens:
                if tree.max_feature() >= self.n_features:
                    raise ModelIntegrityError("tree splits on a feature index >= n_features")
        base.setflags(write=False)
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "base_score", base)

    @property
    def action_count(self):
        return len(self.trees)

    @property
    def state_dim(self):
        return self.n_features

    def predict_margin(self, X):
        """Per-action margins for one state ``(d,)`` or a batch ``(n, d)``."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        batch = check_states(X, self.n_features)
        out = np.empty((batch.shape[0], self.action_count))
        for a, ens in enumerate(self.trees):
            total = np.zeros(batch.shape[0])
            for tree in ens:
                total += tree.predict(batch)
            out[:, a] = self.base_score[a] + self.learning_rate * total
        return out[0] if single else out

    forward = predict_margin

    def predict_action(self, state):
        return int(np.argmax(self.predict_margin(check_state(state, self.n_features))))

    def expected_margin(self, action):
        ens = self.trees[action]
        return self.base_score[action] + self.learning_rate * sum(t.expected_value() for t in ens)


@dataclass(frozen=True)
class ShapVector:
    phi: np.ndarray
    base_value: float


predict_margin = GbdtModel.predict_margin


def _best_split(Xn, r, min_leaf):
    n, d = Xn.shape
    total_sum = r.sum()
    parent = total_sum * total_sum / n
    best_gain = 1e-12 * max(float(r @ r), 1e-300)
    best = None
    n_left = np.arange(1, n, dtype=np.float64)
    size_ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    for f in range(d):
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        sums = np.cumsum(r[order])[:-1]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sums**2 / n_left + (total_sum - sums) ** 2 / (n - n_left) - parent
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best_gain = gain[i]
            best = (f, float(thr))
    return best


def _grow_tree(X, r, max_depth, min_leaf):
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def grow(idx, depth):
        j = len(feature)
        rr = r[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(rr.mean()))
        cover.append(float(idx.shape[0]))
        if depth >= max_depth or idx.shape[0] < 2 * min_leaf or rr.max() == rr.min():
            return j
        split = _best_split(X[idx], rr, min_leaf)
        if split is None:
            return j
        f, thr = split
        goes_left = X[idx, f] <= thr
        feature[j] = f
        threshold[j] = thr
        left[j] = grow(idx[goes_left], depth + 1)
        right[j] = grow(idx[~goes_left], depth + 1)
        return j

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(feature, threshold, left, right, value, cover)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def boost(X, y, action_count, rounds=100, max_depth=4, learning_rate=0.1, min_leaf=5):
    """One-vs-rest logistic boosting on arrays; see :func:`fit_gbdt`."""
    rounds = check_positive_int(rounds, "rounds")
    max_depth = check_positive_int(max_depth, "max_depth")
    min_leaf = check_positive_int(min_leaf, "min_leaf")
    if not learning_rate > 0:
        raise InputError("learning_rate must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] < 1 or y.shape != (X.shape[0],):
        raise InputError("need a non-empty 2-D state matrix and one action per row")
    if np.unique(y).size < 2:
        warnings.warn("all recorded actions are identical; margins of absent actions are constant",
                      DegenerateLabelWarning, stacklevel=2)
    ensembles, base = [], np.empty(action_count)
    for a in range(action_count):
        target = (y == a).astype(np.float64)
        p = min(max(target.mean(), 1e-6), 1 - 1e-6)
        base[a] = math.log(p / (1 - p))
        margin = np.full(X.shape[0], base[a])
        ens = []
        for _ in range(rounds):
            tree = _grow_tree(X, target - _sigmoid(margin), max_depth, min_leaf)
            margin += learning_rate * tree.predict(X)
            ens.append(tree)
        ensembles.append(ens)
    return GbdtModel(ensembles, float(learning_rate), base, X.shape[1])


def fit_gbdt(dataset, rounds=100, max_depth=4, learning_rate=0.1, min_leaf=5):
    """Distil a dataset's state->action mapping into per-action boosted trees.

    Each round fits a regression tree to ``y - sigmoid(margin)`` by exact
    greedy variance reduction over midpoints of sorted feature values. Gain
    ties go to the lower feature index, then the lower threshold.
    """
    return boost(dataset.states, dataset.actions, dataset.spec.action_count,
                 rounds=rounds, max_depth=max_depth, learning_rate=learning_rate, min_leaf=min_leaf)


def _unwound_sum(pw, z, o):
    # sum of path weights after removing the element with fractions (z, o)
    length = len(pw) - 1
    total = 0.0
    if o != 0.0:
        nxt = pw[length]
        for j in range(length - 1, -1, -1):
            tmp = nxt * (length + 1) / ((j + 1) * o)
            total += tmp
            nxt = pw[j] - tmp * z * (length - j) / (length + 1)
    else:
        for j in range(length - 1, -1, -1):
            total += pw[j] * (length + 1) / (z * (length - j))
    return total


def _unwind(pd, pz, po, pw, i):
    length = len(pw) - 1
    o, z = po[i], pz[i]
    pw = pw[:]
    nxt = pw[length]
    for j in range(length - 1, -1, -1):
        if o != 0.0:
            tmp = pw[j]
            pw[j] = nxt * (length + 1) / ((j + 1) * o)
            nxt = tmp - pw[j] * z * (length - j) / (length + 1)
        else:
            pw[j] = pw[j] * (length + 1) / (z * (length - j))
    return pd[:i] + pd[i + 1:], pz[:i] + pz[i + 1:], po[:i] + po[i + 1:], pw[:-1]


def _tree_shap_into(tree, x, phi, scale):
    feature, threshold, left, right, value, cover = tree._lists

    def recurse(j, pd, pz, po, pw, zero_frac, one_frac, feat):
        # extend the path with (feat, zero_frac, one_frac)
        length = len(pw)
        pd = pd + [feat]
        pz = pz + [zero_frac]
        po = po + [one_frac]
        pw = pw + [1.0 if length == 0 else 0.0]
        for i in range(length - 1, -1, -1):
            pw[i + 1] += one_frac * pw[i] * (i + 1) / (length + 1)
            pw[i] = zero_frac * pw[i] * (length - i) / (length + 1)

        f = feature[j]
        if f == LEAF:
            v = value[j] * scale
            for i in range(1, len(pw)):
                w = _unwound_sum(pw, pz[i], po[i])
                phi[pd[i]] += w * (po[i] - pz[i]) * v
            return

        if x[f] <= threshold[j]:
            hot, cold = left[j], right[j]
        else:
            hot, cold = right[j], left[j]
        in_zero, in_one = 1.0, 1.0
        for k in range(1, len(pd)):
            if pd[k] == f:
                in_zero, in_one = pz[k], po[k]
                pd, pz, po, pw = _unwind(pd, pz, po, pw, k)
                break
        c = cover[j]
        hot_zero = in_zero * cover[hot] / c
        if hot_zero != 0.0 or in_one != 0.0:
            recurse(hot, pd, pz, po, pw, hot_zero, in_one, f)
        cold_zero = in_zero * cover[cold] / c
        if cold_zero != 0.0:
            recurse(cold, pd, pz, po, pw, cold_zero, 0.0, f)

    recurse(0, [], [], [], [], 1.0, 1.0, -1)


def tree_shap(model, state, action):
    """Exact path-dependent Shapley values of ``model``'s margin for ``action``."""
    x = check_state(state, model.n_features).tolist()
    action = check_action(action, model.action_count)
    phi = [0.0] * model.n_features
    for tree in model.trees[action]:
        _tree_shap_into(tree, x, phi, model.learning_rate)
    return ShapVector(np.array(phi), float(model.expected_margin(action)))


def _subset_values(tree, x, masks):
    """v(S) for every subset bitmask in ``masks``: follow x on features in S,
    average children by cover otherwise."""
    feature, threshold, left, right, value, cover = tree._lists

    def rec(j):
        f = feature[j]
        if f == LEAF:
            return np.full(masks.shape[0], value[j])
        lo, hi = left[j], right[j]
        v_lo, v_hi = rec(lo), rec(hi)
        averaged = (cover[lo] * v_lo + cover[hi] * v_hi) / cover[j]
        followed = v_lo if x[f] <= threshold[j] else v_hi
        return np.where((masks >> f) & 1, followed, averaged)

    return rec(0)


def brute_shapley(model, state, action):
    """Shapley values by enumerating all 2^d coalitions (d <= 15)."""
    d = model.n_features
    if d > BRUTE_FORCE_MAX_FEATURES:
        raise ResourceError(f"brute-force Shapley needs 2^{d} evaluations; limit is d <= {BRUTE_FORCE_MAX_FEATURES}")
    x = check_state(state, d)
    action = check_action(action, model.action_count)
    masks = np.arange(2**d, dtype=np.int64)
    v = np.full(masks.shape[0], model.base_score[action])
    for tree in model.trees[action]:
        v = v + model.learning_rate * _subset_values(tree, x, masks)
    sizes = np.array([bin(m).count("1") for m in range(2**d)])
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
                       for s in range(d + 1)])
    phi = np.empty(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return ShapVector(phi, float(v[0]))


class GradientBoostedStudent(ClassifierMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`boost`.

    Parameters
    ----------
    n_rounds : int, default=100
    max_depth : int, default=4
    learning_rate : float, default=0.1
    min_leaf : int, default=5
        Minimum number of training rows in each child of a split.
    n_actions : int or None, default=None
        Action count; inferred as ``max(y) + 1`` (at least 2) when None.
    """

    def __init__(self, n_rounds=100, max_depth=4, learning_rate=0.1, min_leaf=5, n_actions=None):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.n_actions = n_actions

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        if y.min() < 0:
            raise InputError("actions must be non-negative indices")
        n_actions = self.n_actions or max(int(y.max()) + 1, 2)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.arange(n_actions)
        self.model_ = boost(X, y, n_actions, self.n_rounds, self.max_depth, self.learning_rate, self.min_leaf)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.model_.predict_margin(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def shap_values(self, X, action):
        """Row-wise TreeSHAP values for ``action``, shape ``(n, d)``."""
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return np.array([tree_shap(self.model_, x, action).phi for x in X])

    def expected_value(self, action):
        check_is_fitted(self)
        return float(self.model_.expected_margin(action))
