"""Activation-function kernels, a small trainable CNN, and sum-rule ensembles."""

from .activations import (
    ActivationFamily,
    Kind,
    aplu_eval,
    family_from_tag,
    fixed_dx,
    fixed_forward,
    melu_eval,
    mexican_hat,
    mexican_hat_dx,
    prelu_eval,
    srelu_eval,
)
from .basis import MexicanHatBasis, build_melu_basis
from .ensemble import ScoreMatrix, accuracy, build_ensembles, fuse_sum
from .errors import ConfigurationError, DatasetParseError, MelunetError, TrainingFault
from .evaluation import (
    DatasetSpec,
    ExperimentConfig,
    augment,
    kfold_split,
    run_experiment,
    wilcoxon_signed_rank,
)
from .nn import (
    Network,
    ParamGroup,
    TrainConfig,
    build_small_cnn,
    forward,
    loss_and_backward,
    predict_scores,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationFamily", "Kind", "aplu_eval", "family_from_tag", "fixed_dx",
    "fixed_forward", "melu_eval", "mexican_hat", "mexican_hat_dx",
    "prelu_eval", "srelu_eval", "MexicanHatBasis", "build_melu_basis",
    "ScoreMatrix", "accuracy", "build_ensembles", "fuse_sum",
    "ConfigurationError", "DatasetParseError", "MelunetError", "TrainingFault",
    "DatasetSpec", "ExperimentConfig", "augment", "kfold_split",
    "run_experiment", "wilcoxon_signed_rank", "Network", "ParamGroup",
    "TrainConfig", "build_small_cnn", "forward", "loss_and_backward",
    "predict_scores", "sgd_step", "train",
]
