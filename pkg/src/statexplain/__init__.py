"""State-importance explainers and fidelity/stability evaluators for small RL policies."""

from .datasets import Dataset, collect, read_csv, subsample, write_csv
from .dqn import DqnConfig, train_dqn
from .envs import EnvSpec, get_spec, make_env, planted_truth_model
from .evaluators import FidelityConfig, StabilityConfig, TopKMode, aim, aum, curve_and_auc, pgi, pgu, ris
from .explainers import (
    SARFA,
    Attribution,
    ExplainContext,
    ExplainerConfig,
    GradientSHAP,
    IntegratedGradients,
    PerturbationSaliency,
    TabularLIME,
    TabularSHAP,
    explain,
)
from .policy import MlpPolicy, load_weights, save_weights
from .trees import GbdtModel, GradientBoostedStudent, brute_shapley, fit_gbdt, tree_shap

__version__ = "0.1.0"

__all__ = [
    "Attribution", "Dataset", "DqnConfig", "EnvSpec", "ExplainContext", "ExplainerConfig",
    "FidelityConfig", "GbdtModel", "GradientBoostedStudent", "GradientSHAP", "IntegratedGradients",
    "MlpPolicy", "PerturbationSaliency", "SARFA", "StabilityConfig", "TabularLIME", "TabularSHAP",
    "TopKMode", "aim", "aum", "brute_shapley", "collect", "curve_and_auc", "explain", "fit_gbdt",
    "get_spec", "load_weights", "make_env", "pgi", "pgu", "planted_truth_model", "read_csv", "ris",
    "save_weights", "subsample", "train_dqn", "tree_shap", "write_csv",
]
