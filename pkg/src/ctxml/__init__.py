"""Contextualized generalized linear models.

A context encoder maps each sample's context vector to the parameters of that
sample's own GLM; encoder and likelihood are trained jointly by gradient
descent on a small numpy reverse-mode tape.
"""

from .data import Dataset
from .encoders import EncoderSpec, SampleModel
from .glm import LikelihoodSpec, RegularizationSpec
from .training import BootstrapEnsemble, FittedModel, TrainConfig, bootstrap_fit, fit

__all__ = [
    "BootstrapEnsemble",
    "Dataset",
    "EncoderSpec",
    "FittedModel",
    "LikelihoodSpec",
    "RegularizationSpec",
    "SampleModel",
    "TrainConfig",
    "bootstrap_fit",
    "fit",
]

__version__ = "0.1.0"
