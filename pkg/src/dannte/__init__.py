"""Domain-adversarial LSTM regression for virtual sensing on shifted time series.

A small reverse-mode autodiff core drives a two-headed network: an LSTM
feature extractor feeding a regressor and, through a gradient-reversal
layer, a domain classifier. Training uses half-source/half-target batches
that keep each domain in time order.
"""

from .errors import (
    ContractError, DannteError, DataError, DomainError, NonFiniteError, ShapeError,
)
from .kernels import BACKEND
from .tensor import Tape, Tensor, grad_check
from .layers import DannteModel, init_model, model_forward, predict, embed
from .data import (
    ShiftConfig, StandardizationStats, TimeSeries, WindowSet, build_equal_batches,
    build_union, fit_stats, generate_synthetic, load_series, standardize, window, write_series,
)
from .metrics import MetricsReport, embedding_kl, mape, mse, pca_project
from .training import TrainConfig, evaluate, kfold, train, train_step
from .comparison import ComparisonTable, run_comparison

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ComparisonTable", "ContractError", "DannteError", "DannteModel", "DataError",
    "DomainError", "MetricsReport", "NonFiniteError", "ShapeError", "ShiftConfig",
    "StandardizationStats", "Tape", "Tensor", "TimeSeries", "TrainConfig", "WindowSet",
    "build_equal_batches", "build_union", "embed", "embedding_kl", "evaluate", "fit_stats",
    "generate_synthetic", "grad_check", "init_model", "kfold", "load_series", "mape",
    "model_forward", "mse", "pca_project", "predict", "run_comparison", "standardize",
    "train", "train_step", "window", "write_series",
]
