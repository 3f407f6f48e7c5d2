"""Model-agnostic helpers: prediction dispatch and JSON persistence."""

from __future__ import annotations

import hashlib
import json

from ..datagen import FeatureVector, design_matrix, labels_of  # re-exported for callers
from ..errors import ContractError, DataError
from .gbt import GbtModel
from .logistic import LogisticModel

Model = LogisticModel | GbtModel

MODEL_FORMAT = "feedlab-model-v1"


def predict(model: Model, features: FeatureVector) -> float:
    """P(creates in the response window | features), in (0, 1)."""
    if not hasattr(model, "predict_fv"):
        raise ContractError(f"object {type(model).__name__} is not a trained model")
    return model.predict_fv(features)


def model_to_json(model: Model) -> str:
    doc = {"format": MODEL_FORMAT}
    doc.update(model.to_dict())
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"model file format is not {MODEL_FORMAT!r}")
    family = doc.get("family")
    try:
        if family == "logistic":
            return LogisticModel.from_dict(doc)
        if family == "gbt":
            return GbtModel.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model file is structurally invalid: {exc}") from exc
    raise DataError(f"unknown model family {family!r}")


def model_hash(model: Model) -> str:
    return hashlib.sha256(model_to_json(model).encode("utf-8")).hexdigest()[:16]


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(model_to_json(model))
        f.write("\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_json(f.read())
