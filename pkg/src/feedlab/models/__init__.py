"""Creation-response models and their offline evaluation."""

from .metrics import auroc, auprc
from .logistic import (
    LogisticModel,
    LogisticFitDiagnostics,
    fit_logistic,
    logistic_loss_and_grad,
    train_logistic,
)
from .gbt import GbtModel, GbtParams, fit_gbt, train_gbt
from .evaluate import EvalReport, EvalRow, segment_eval, report_to_csv
from .common import (
    design_matrix,
    predict,
    labels_of,
    model_to_json,
    model_from_json,
    model_hash,
    save_model,
    load_model,
)

__all__ = [
    "auroc",
    "auprc",
    "LogisticModel",
    "LogisticFitDiagnostics",
    "fit_logistic",
    "logistic_loss_and_grad",
    "train_logistic",
    "GbtModel",
    "GbtParams",
    "fit_gbt",
    "train_gbt",
    "EvalReport",
    "EvalRow",
    "segment_eval",
    "report_to_csv",
    "design_matrix",
    "predict",
    "labels_of",
    "model_to_json",
    "model_from_json",
    "model_hash",
    "save_model",
    "load_model",
]
