"""Per-state feature attribution methods for Q-value policies.

Every method maps ``(state, explained action)`` to one importance value per
state feature. The functional API (``explain_*``) is the core. The estimator
classes at the bottom wrap it in the scikit-learn ``fit``/``transform``
convention, where ``fit`` receives background states (and actions, for the
tree student).

Policies only need ``forward(X)``, ``input_gradient(X, action)`` and
``state_dim``/``action_count``. Both :class:`~statexplain.policy.MlpPolicy`
and :class:`~statexplain.envs.LinearScorer` qualify.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ._validation import check_action, check_positive_int, check_state, sample_rng
from .datasets import Dataset
from .envs import EnvSpec
from .exceptions import ConfigurationError, InputError
from .trees import GbdtModel, GradientBoostedStudent, tree_shap

METHODS = (
    "tabular_shap",
    "tabular_lime",
    "perturbation_saliency",
    "sarfa",
    "integrated_gradients",
    "gradient_shap",
)
NON_NEGATIVE_METHODS = frozenset({"perturbation_saliency", "sarfa"})
GAUSSIAN_DRAWS = 8
KL_FLOOR = 1e-12


@dataclass(eq=False)
class Attribution:
    method: str
    values: np.ndarray
    explained_action: int
    seconds: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise InputError(f"{self.method} produced non-finite importances")

    def __eq__(self, other):
        if not isinstance(other, Attribution):
            return NotImplemented
        return (
            self.method == other.method
            and self.explained_action == other.explained_action
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class ExplainerConfig:
    ig_steps: int = 64
    ig_baseline: str = "zero"  # or "dataset_mean"
    gshap_samples: int = 64
    lime_samples: int = 1000
    lime_kernel_width: Optional[float] = None  # None -> 0.75 * sqrt(d)
    lime_ridge: float = 1e-3
    perturbation: str = "mean_replace"  # or "gaussian"
    sigma_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("ig_steps", "gshap_samples", "lime_samples"):
            check_positive_int(getattr(self, name), name)
        if self.ig_baseline not in ("zero", "dataset_mean"):
            raise InputError("ig_baseline must be 'zero' or 'dataset_mean'")
        if self.perturbation not in ("mean_replace", "gaussian"):
            raise InputError("perturbation must be 'mean_replace' or 'gaussian'")
        if not self.sigma_scale > 0:
            raise InputError("sigma_scale must be positive")
        if self.lime_ridge < 0:
            raise InputError("lime_ridge must be non-negative")


def softmax_policy(q):
    """Temperature-1 softmax over the last axis, max-subtracted."""
    q = np.asarray(q, dtype=np.float64)
    z = np.exp(q - q.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _require(obj, what, method):
    if obj is None:
        raise ConfigurationError(f"{method} needs {what}")
    return obj


def explain_tabular_shap(student, state, action):
    if not isinstance(student, GbdtModel):
        raise ConfigurationError("tabular_shap needs a fitted GbdtModel student")
    state = check_state(state, student.n_features)
    return Attribution("tabular_shap", tree_shap(student, state, action).phi, action)


def _baseline(config, dataset, d):
    if config.ig_baseline == "zero":
        return np.zeros(d)
    return _require(dataset, "a dataset for the dataset_mean baseline", "integrated_gradients").feature_mean


def explain_ig(policy, state, action, config=ExplainerConfig(), dataset=None):
    """Integrated gradients with a midpoint Riemann sum over ``config.ig_steps`` points."""
    x = check_state(state, policy.state_dim)
    action = check_action(action, policy.action_count)
    b = _baseline(config, dataset, x.shape[0])
    m = config.ig_steps
    alphas = (np.arange(1, m + 1) - 0.5) / m
    path = b + alphas[:, None] * (x - b)
    grads = policy.input_gradient(path, action)
    return Attribution("integrated_gradients", (x - b) * grads.mean(axis=0), action)


def explain_gradient_shap(policy, state, action, dataset, config=ExplainerConfig(), stream=0):
    """Expected gradients: baselines drawn from the dataset, points uniform on each segment."""
    x = check_state(state, policy.state_dim)
    action = check_action(action, policy.action_count)
    if dataset is None or len(dataset) == 0:
        raise InputError("gradient_shap needs a non-empty baseline dataset")
    rng = sample_rng(config.seed, stream)
    n = config.gshap_samples
    baselines = dataset.states[rng.integers(0, len(dataset), size=n)]
    alphas = rng.uniform(size=n)
    diffs = x - baselines
    grads = policy.input_gradient(baselines + alphas[:, None] * diffs, action)
    return Attribution("gradient_shap", (grads * diffs).mean(axis=0), action)


def _perturbed_probs(policy, x, p, batch):
    p_pert = softmax_policy(policy.forward(batch))
    p_pert[np.all(batch == x, axis=1)] = p  # identical input, identical policy
    return p_pert


def _perturbed_batches(x, dataset, config, rng):
    """Yield ``(i, batch)``: states with feature i perturbed, one row per draw."""
    d = x.shape[0]
    if config.perturbation == "mean_replace":
        for i in range(d):
            s = x.copy()
            s[i] = dataset.feature_mean[i]
            yield i, s[None, :]
    else:
        noise = rng.standard_normal((d, GAUSSIAN_DRAWS))
        for i in range(d):
            s = np.repeat(x[None, :], GAUSSIAN_DRAWS, axis=0)
            s[:, i] += noise[i] * config.sigma_scale * dataset.feature_std[i]
            yield i, s


def explain_perturbation_saliency(policy, state, dataset, config=ExplainerConfig(), stream=0, action=None):
    """0.5 * ||pi(s) - pi(s_i)||^2 per perturbed feature. Ignores the explained action."""
    x = check_state(state, policy.state_dim)
    _require(dataset, "a dataset for perturbation statistics", "perturbation_saliency")
    rng = sample_rng(config.seed, stream)
    p = softmax_policy(policy.forward(x))
    sal = np.zeros(x.shape[0])
    for i, batch in _perturbed_batches(x, dataset, config, rng):
        p_pert = _perturbed_probs(policy, x, p, batch)
        sal[i] = np.mean(0.5 * np.sum((p - p_pert) ** 2, axis=1))
    explained = policy.act_greedy(x) if action is None else check_action(action, policy.action_count)
    return Attribution("perturbation_saliency", sal, explained)


def _renormalise(p):
    total = p.sum()
    return p / total if total > 0 else np.full(p.shape, 1.0 / p.shape[0])


def sarfa_salience(p, p_pert, action):
    """Harmonic mean of specificity and relevance for one perturbed distribution."""
    dp = p[action] - p_pert[action]
    if dp <= 0:
        return 0.0
    rest = np.delete(p, action)
    rest_pert = np.delete(p_pert, action)
    rest = np.maximum(_renormalise(rest), KL_FLOOR)
    rest_pert = np.maximum(_renormalise(rest_pert), KL_FLOOR)
    kl = float(np.sum(rest * np.log(rest / rest_pert)))
    relevance = 1.0 / (1.0 + kl)
    return 2.0 * dp * relevance / (dp + relevance)


def explain_sarfa(policy, state, action, dataset, config=ExplainerConfig(), stream=0):
    x = check_state(state, policy.state_dim)
    action = check_action(action, policy.action_count)
    _require(dataset, "a dataset for perturbation statistics", "sarfa")
    rng = sample_rng(config.seed, stream)
    p = softmax_policy(policy.forward(x))
    sal = np.zeros(x.shape[0])
    for i, batch in _perturbed_batches(x, dataset, config, rng):
        p_pert = _perturbed_probs(policy, x, p, batch)
        sal[i] = np.mean([sarfa_salience(p, row, action) for row in p_pert])
    return Attribution("sarfa", sal, action)


def weighted_ridge(Z, y, weights, ridge):
    """Weighted ridge regression with an unpenalised intercept; returns the slopes."""
    w = weights / weights.sum()
    Zc = Z - w @ Z
    yc = y - w @ y
    gram = (Zc * weights[:, None]).T @ Zc + ridge * np.eye(Z.shape[1])
    return np.linalg.solve(gram, (Zc * weights[:, None]).T @ yc)


def explain_tabular_lime(policy, state, action, dataset, config=ExplainerConfig(), stream=0):
    """Local weighted-ridge surrogate of Q[action] around the state.

    Perturbations are Gaussian with the dataset's per-feature std. Regression
    runs on standardised offsets and coefficients are mapped back to raw units.
    """
    x = check_state(state, policy.state_dim)
    action = check_action(action, policy.action_count)
    _require(dataset, "a dataset for perturbation statistics", "tabular_lime")
    d = x.shape[0]
    n = config.lime_samples
    if n < d + 1:
        raise InputError(f"lime_samples must be at least d + 1 = {d + 1}")
    rng = sample_rng(config.seed, stream)
    std = dataset.feature_std
    active = std > 0
    coef = np.zeros(d)
    if not active.any():
        return Attribution("tabular_lime", coef, action)
    offsets = rng.standard_normal((n, d)) * std
    y = policy.forward(x + offsets)[:, action]
    Z = offsets[:, active] / std[active]
    width = config.lime_kernel_width or 0.75 * np.sqrt(d)
    weights = np.exp(-np.sum(Z**2, axis=1) / width**2)
    coef[active] = weighted_ridge(Z, y, weights, config.lime_ridge) / std[active]
    return Attribution("tabular_lime", coef, action)


@dataclass
class ExplainContext:
    """Objects an explainer may need; which ones depends on the method."""

    policy: object = None
    student: Optional[GbdtModel] = None
    dataset: object = None
    config: ExplainerConfig = field(default_factory=ExplainerConfig)


def _dispatch(method, ctx, state, action, stream):
    cfg = ctx.config
    if method == "tabular_shap":
        return explain_tabular_shap(_require(ctx.student, "a fitted student model", method), state, action)
    policy = _require(ctx.policy, "a policy", method)
    if method == "integrated_gradients":
        return explain_ig(policy, state, action, cfg, ctx.dataset)
    dataset = _require(ctx.dataset, "a dataset", method)
    if method == "gradient_shap":
        return explain_gradient_shap(policy, state, action, dataset, cfg, stream)
    if method == "perturbation_saliency":
        return explain_perturbation_saliency(policy, state, dataset, cfg, stream, action=action)
    if method == "sarfa":
        return explain_sarfa(policy, state, action, dataset, cfg, stream)
    return explain_tabular_lime(policy, state, action, dataset, cfg, stream)


def explain(method, context, state, action, stream=0):
    """Run one explainer and record its wall-clock duration in ``seconds``.

    ``stream`` selects the per-sample random stream, so results do not depend
    on evaluation order or worker count.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    start = time.perf_counter()
    attribution = _dispatch(method, context, state, action, stream)
    attribution.seconds = time.perf_counter() - start
    return attribution


class _PolicyExplainer(TransformerMixin, BaseEstimator):
    """Shared estimator plumbing.

    ``fit(X)`` stores background states. ``transform(X, actions=None)``
    returns an ``(n, d)`` importance matrix, explaining the policy's greedy
    action when ``actions`` is omitted. Row i uses random stream i.
    """

    method = None

    def _config(self):
        return ExplainerConfig()

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        self.background_ = X
        spec = EnvSpec("background", X.shape[1], max(self._action_count(), 2),
                       tuple(f"x{i}" for i in range(X.shape[1])))
        self.dataset_ = Dataset(spec, X, np.zeros(X.shape[0], dtype=np.int64))
        return self

    def _action_count(self):
        return self.policy.action_count

    def _context(self):
        return ExplainContext(policy=self.policy, dataset=self.dataset_, config=self._config())

    def explain(self, state, action=None, stream=0):
        check_is_fitted(self)
        if action is None:
            action = self.policy.act_greedy(state)
        return explain(self.method, self._context(), state, action, stream=stream)

    def transform(self, X, actions=None):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        if actions is None:
            actions = [None] * X.shape[0]
        return np.array([self.explain(x, a, stream=i).values for i, (x, a) in enumerate(zip(X, actions))])


class IntegratedGradients(_PolicyExplainer):
    method = "integrated_gradients"

    def __init__(self, policy, steps=64, baseline="zero"):
        self.policy = policy
        self.steps = steps
        self.baseline = baseline

    def _config(self):
        return ExplainerConfig(ig_steps=self.steps, ig_baseline=self.baseline)


class GradientSHAP(_PolicyExplainer):
    method = "gradient_shap"

    def __init__(self, policy, n_samples=64, random_state=0):
        self.policy = policy
        self.n_samples = n_samples
        self.random_state = random_state

    def _config(self):
        return ExplainerConfig(gshap_samples=self.n_samples, seed=self.random_state)


class PerturbationSaliency(_PolicyExplainer):
    method = "perturbation_saliency"

    def __init__(self, policy, perturbation="mean_replace", sigma_scale=0.5, random_state=0):
        self.policy = policy
        self.perturbation = perturbation
        self.sigma_scale = sigma_scale
        self.random_state = random_state

    def _config(self):
        return ExplainerConfig(perturbation=self.perturbation, sigma_scale=self.sigma_scale, seed=self.random_state)


class SARFA(PerturbationSaliency):
    method = "sarfa"


class TabularLIME(_PolicyExplainer):
    method = "tabular_lime"

    def __init__(self, policy, n_samples=1000, kernel_width=None, ridge=1e-3, random_state=0):
        self.policy = policy
        self.n_samples = n_samples
        self.kernel_width = kernel_width
        self.ridge = ridge
        self.random_state = random_state

    def _config(self):
        return ExplainerConfig(lime_samples=self.n_samples, lime_kernel_width=self.kernel_width,
                               lime_ridge=self.ridge, seed=self.random_state)


class TabularSHAP(TransformerMixin, BaseEstimator):
    """Distil the policy's state->action mapping into boosted trees, then explain with TreeSHAP.

    ``fit(X, y)`` takes states and the policy's recorded actions.
    ``transform(X, actions=None)`` explains the student's predicted action
    unless ``actions`` is given.
    """

    method = "tabular_shap"

    def __init__(self, n_rounds=100, max_depth=4, learning_rate=0.1, min_leaf=5, n_actions=None):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.n_actions = n_actions

    def fit(self, X, y):
        self.student_ = GradientBoostedStudent(self.n_rounds, self.max_depth, self.learning_rate,
                                               self.min_leaf, self.n_actions).fit(X, y)
        self.n_features_in_ = self.student_.n_features_in_
        return self

    def explain(self, state, action=None, stream=0):
        check_is_fitted(self)
        model = self.student_.model_
        if action is None:
            action = model.predict_action(state)
        return explain("tabular_shap", ExplainContext(student=model), state, action, stream=stream)

    def transform(self, X, actions=None):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        if actions is None:
            actions = [None] * X.shape[0]
        return np.array([self.explain(x, a).values for x, a in zip(X, actions)])
