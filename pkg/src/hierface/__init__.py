"""Hierarchical probabilistic model for facial landmark localization."""

from .component import ComponentMixture
from .estimator import HierarchicalLandmarkRegressor
from .gauss import Gaussian, LinearGaussian, WeightedGaussianMixture
from .model import (
    HierarchicalModel,
    infer_batch,
    infer_landmarks,
    load_model,
    log_evidence,
    posterior_over_configs,
    query_joint_states,
    query_state_given_label,
    save_model,
)
from .network import DiscreteNetwork
from .shapes import ComponentPartition, Dataset, load_dataset, make_folds, normalize, normalized_error, save_dataset
from .synth import make_generator, synthesize

__version__ = "0.1.0"

__all__ = [
    "ComponentMixture",
    "ComponentPartition",
    "Dataset",
    "DiscreteNetwork",
    "Gaussian",
    "HierarchicalLandmarkRegressor",
    "HierarchicalModel",
    "LinearGaussian",
    "WeightedGaussianMixture",
    "infer_batch",
    "infer_landmarks",
    "load_dataset",
    "load_model",
    "log_evidence",
    "make_folds",
    "make_generator",
    "normalize",
    "normalized_error",
    "posterior_over_configs",
    "query_joint_states",
    "query_state_given_label",
    "save_dataset",
    "save_model",
    "synthesize",
]
