"""Shared-kernel Gaussian mixtures trained by supervised EM, with a synthetic
7-segment digit benchmark."""

from .classifier import CompositeModel, classify, classify_batch, class_log_scores
from .em import TrainingConfig, TrainingReport, em_train, init_mixture, init_parameters, skem_train
from .errors import (
    CovarianceError,
    DivergenceError,
    IdxDimensionError,
    IdxFormatError,
    IdxMagicError,
    IdxTruncatedError,
    ModelFormatError,
    SkemError,
)
from .metrics import ConfusionMatrix, aggregate, confusion, metrics
from .mixture import GaussianComponent, LabeledDataset, MixtureModel, SharedKernelModel

__version__ = "0.1.0"

__all__ = [
    "CompositeModel",
    "classify",
    "classify_batch",
    "class_log_scores",
    "TrainingConfig",
    "TrainingReport",
    "em_train",
    "init_mixture",
    "init_parameters",
    "skem_train",
    "CovarianceError",
    "DivergenceError",
    "IdxDimensionError",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "ModelFormatError",
    "SkemError",
    "ConfusionMatrix",
    "aggregate",
    "confusion",
    "metrics",
    "GaussianComponent",
    "LabeledDataset",
    "MixtureModel",
    "SharedKernelModel",
]
