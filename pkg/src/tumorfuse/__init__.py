"""Three-branch brain-tumor classifier with instance-transfer boosting and decision-template fusion.

Built on a small numpy autodiff engine (:mod:`tumorfuse.tensor`).
"""

from .config import RunConfig, load_config, parse_config
from .errors import (CheckpointError, ConfigError, ContractError, DimensionError, DivergenceError,
                     EstimationError, EvaluationError, NonFiniteGradientError, SplitError, TumorFuseError)
from .fusion import DecisionProfile, DecisionTemplate, build_decision_profile, build_decision_templates, fuse
from .pipeline import Artifacts, Metrics, evaluate, load_artifacts, prepare_data, save_artifacts, train_all
from .tensor import Tensor, backward, grad_check
from .tradaboost import boosted_predict, effective_weights, tradaboost_train

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "parse_config",
    "CheckpointError", "ConfigError", "ContractError", "DimensionError", "DivergenceError", "EstimationError",
    "EvaluationError", "NonFiniteGradientError", "SplitError", "TumorFuseError",
    "DecisionProfile", "DecisionTemplate", "build_decision_profile", "build_decision_templates", "fuse",
    "Artifacts", "Metrics", "evaluate", "load_artifacts", "prepare_data", "save_artifacts", "train_all",
    "Tensor", "backward", "grad_check",
    "boosted_predict", "effective_weights", "tradaboost_train",
]
