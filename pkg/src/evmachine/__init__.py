"""Extreme Value Machine: open-set classification from per-point Weibull
models of margin distributions, with set-cover model reduction and
batch-incremental updates."""

from .core import UNKNOWN, Dataset, DistanceMetric, EvmModel, HyperParams, Prediction, PsiModel, Sample
from .evm import class_probability, predict, predict_labels, predict_proba, train, update
from .io import load_dense_csv, load_model, load_sparse, save_model
from .reduce import reduce_budgeted, reduce_class, reduce_model

__version__ = "0.1.0"

__all__ = [
    "UNKNOWN",
    "Dataset",
    "DistanceMetric",
    "EvmModel",
    "HyperParams",
    "Prediction",
    "PsiModel",
    "Sample",
    "class_probability",
    "load_dense_csv",
    "load_model",
    "load_sparse",
    "predict",
    "predict_labels",
    "predict_proba",
    "reduce_budgeted",
    "reduce_class",
    "reduce_model",
    "save_model",
    "train",
    "update",
]
