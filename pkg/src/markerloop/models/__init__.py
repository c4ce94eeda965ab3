"""Model families behind one interface: train, predict probabilities,
serialize losslessly.

A trained model carries its fitted preprocessing (numeric transform, column
layout, missing sentinel) so inference replays the training-time pipeline
identically. Prediction is a pure function of (model, feature row).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..preprocess import ColumnInfo, DesignMatrix, NumericTransform
from . import forest as _forest
from . import gbdt as _gbdt
from . import logistic as _logistic
from .params import (
    FAMILIES,
    FAMILY_FOREST,
    FAMILY_GBDT,
    FAMILY_LOGISTIC,
    GROWTH_DEPTHWISE,
    GROWTH_LEAFWISE,
    HyperParams,
    ModelDocumentError,
    ModelError,
    TrainingError,
)

MODEL_FORMAT = "markerloop-model"
MODEL_VERSION = 1

__all__ = [
    "FAMILIES",
    "FAMILY_FOREST",
    "FAMILY_GBDT",
    "FAMILY_LOGISTIC",
    "GROWTH_DEPTHWISE",
    "GROWTH_LEAFWISE",
    "HyperParams",
    "ModelDocumentError",
    "ModelError",
    "TrainedModel",
    "TrainingError",
    "audit_gbdt",
    "deserialize_model",
    "predict_proba",
    "serialize_model",
    "train",
    "train_gbdt",
    "train_logistic",
    "train_random_forest",
]


@dataclass
class TrainedModel:
    """Fitted artifact of any family.

    ``payload`` holds the family-specific parameters: boosted trees and base
    score, forest trees, or linear weights.
    """

    hyperparams: HyperParams
    columns: tuple[ColumnInfo, ...]
    sentinel: float | None
    transform: NumericTransform
    payload: object
    metadata: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.hyperparams.family

    @property
    def column_labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.columns)

    def source_markers(self) -> tuple[str, ...]:
        seen: list[str] = []
        for c in self.columns:
            if c.source not in seen:
                seen.append(c.source)
        return tuple(seen)


def _check_training_input(X: DesignMatrix, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if X.n_rows != len(y):
        raise TrainingError(f"label length {len(y)} does not match {X.n_rows} rows")
    if not np.all(np.isin(y, (0, 1))):
        raise TrainingError("labels must be binary 0/1")
    if len(np.unique(y)) < 2 or int(y.sum()) < 2 or int((1 - y).sum()) < 2:
        raise TrainingError("training needs at least 2 rows of each class")
    if not np.all(np.isfinite(X.values)):
        raise TrainingError("non-finite values in design matrix")
    return y.astype(float)


def _base_metadata(hp: HyperParams, extra: dict | None) -> dict:
    md = {
        "seed": hp.seed,
        "hyperparams": hp.to_dict(),
        "loss": "binary-logistic",
        "missing_routing": "larger-hessian-side default, ties left",
    }
    if extra:
        md.update(extra)
    return md


def train_gbdt(
    X: DesignMatrix,
    y: np.ndarray,
    hp: HyperParams,
    transform: NumericTransform | None = None,
    base_score: float | None = None,
    metadata: dict | None = None,
) -> TrainedModel:
    """Boosted-tree training; the base score defaults to the log-odds of the
    training positive rate."""
    if hp.family != FAMILY_GBDT:
        raise TrainingError(f"train_gbdt got family {hp.family!r}")
    yf = _check_training_input(X, y)
    transform = transform or NumericTransform()
    Xt = transform.apply(X)
    base = _gbdt.prior_log_odds(yf) if base_score is None else float(base_score)
    trees = _gbdt.fit_boosted_trees(Xt.values, yf, hp, X.sentinel, base)
    md = _base_metadata(hp, metadata)
    md["base_score_rule"] = "class-prior log-odds" if base_score is None else "override"
    return TrainedModel(
        hyperparams=hp,
        columns=X.columns,
        sentinel=X.sentinel,
        transform=transform,
        payload={"base_score": base, "trees": trees},
        metadata=md,
    )


def train_random_forest(
    X: DesignMatrix,
    y: np.ndarray,
    hp: HyperParams,
    transform: NumericTransform | None = None,
    metadata: dict | None = None,
) -> TrainedModel:
    if hp.family != FAMILY_FOREST:
        raise TrainingError(f"train_random_forest got family {hp.family!r}")
    yf = _check_training_input(X, y)
    transform = transform or NumericTransform()
    Xt = transform.apply(X)
    trees = _forest.fit_forest(Xt.values, yf, hp, X.sentinel)
    return TrainedModel(
        hyperparams=hp,
        columns=X.columns,
        sentinel=X.sentinel,
        transform=transform,
        payload={"trees": trees},
        metadata=_base_metadata(hp, metadata),
    )


def train_logistic(
    X: DesignMatrix,
    y: np.ndarray,
    hp: HyperParams,
    transform: NumericTransform | None = None,
    metadata: dict | None = None,
) -> TrainedModel:
    if hp.family != FAMILY_LOGISTIC:
        raise TrainingError(f"train_logistic got family {hp.family!r}")
    yf = _check_training_input(X, y)
    transform = transform or NumericTransform()
    Xt = transform.apply(X)
    fit = _logistic.fit_logistic(Xt, yf, hp)
    md = _base_metadata(hp, metadata)
    md["converged"] = fit.converged
    if not fit.converged:
        md["warning"] = f"did not reach gradient tolerance within {_logistic.MAX_ITER} iterations"
    return TrainedModel(
        hyperparams=hp,
        columns=X.columns,
        sentinel=X.sentinel,
        transform=transform,
        payload=fit,
        metadata=md,
    )


_TRAINERS = {
    FAMILY_GBDT: train_gbdt,
    FAMILY_FOREST: train_random_forest,
    FAMILY_LOGISTIC: train_logistic,
}


def train(
    X: DesignMatrix,
    y: np.ndarray,
    hp: HyperParams,
    transform: NumericTransform | None = None,
    metadata: dict | None = None,
) -> TrainedModel:
    """Family dispatch."""
    return _TRAINERS[hp.family](X, y, hp, transform=transform, metadata=metadata)


def raw_scores(model: TrainedModel, X: DesignMatrix) -> np.ndarray:
    """Pre-sigmoid margins for a gbdt model (base + sum of scaled trees)."""
    if model.family != FAMILY_GBDT:
        raise ModelError("raw_scores is defined for gbdt models only")
    Xt = model.transform.apply(X)
    payload = model.payload
    out = np.full(X.n_rows, payload["base_score"])
    for tree in payload["trees"]:
        out = out + model.hyperparams.learning_rate * _gbdt.tree_predict(
            tree, Xt.values, model.sentinel
        )
    return out


def predict_proba(model: TrainedModel, X: DesignMatrix) -> np.ndarray:
    """Positive-class probabilities; requires X's column labels to equal the
    training layout exactly."""
    if X.labels != model.column_labels:
        raise ModelError(
            "column mismatch between model and input matrix "
            f"(model has {len(model.column_labels)} columns, input {len(X.labels)})"
        )
    if model.family == FAMILY_GBDT:
        p = _gbdt.sigmoid(raw_scores(model, X))
        return np.clip(p, 1e-15, 1.0 - 1e-15)
    Xt = model.transform.apply(X)
    if model.family == FAMILY_FOREST:
        trees = model.payload["trees"]
        acc = np.zeros(X.n_rows)
        for tree in trees:
            acc += _forest.gini_tree_predict(tree, Xt.values, model.sentinel)
        p = acc / len(trees)
        return np.clip(p, 1e-15, 1.0 - 1e-15)
    if model.family == FAMILY_LOGISTIC:
        p = _logistic.logistic_predict(model.payload, Xt.values)
        return np.clip(p, 1e-15, 1.0 - 1e-15)
    raise ModelError(f"unknown family {model.family!r}")


def audit_gbdt(model: TrainedModel, X: DesignMatrix, y: np.ndarray) -> _gbdt.GbdtAudit:
    """Recompute every leaf weight and split gain of a boosted model from the
    training data it was fitted on."""
    if model.family != FAMILY_GBDT:
        raise ModelError("audit_gbdt needs a gbdt model")
    Xt = model.transform.apply(X)
    return _gbdt.audit_boosted_trees(
        model.payload["trees"],
        Xt.values,
        np.asarray(y, dtype=float),
        model.hyperparams,
        model.sentinel,
        model.payload["base_score"],
    )


def serialize_model(model: TrainedModel) -> str:
    """Versioned JSON document; lossless (floats keep full precision)."""
    if model.family == FAMILY_GBDT:
        payload = {
            "base_score": model.payload["base_score"],
            "trees": [t.to_dict() for t in model.payload["trees"]],
        }
    elif model.family == FAMILY_FOREST:
        payload = {"trees": [t.to_dict() for t in model.payload["trees"]]}
    else:
        payload = model.payload.to_dict()
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "family": model.family,
        "hyperparams": model.hyperparams.to_dict(),
        "columns": [c.to_dict() for c in model.columns],
        "sentinel": model.sentinel,
        "transform": model.transform.to_dict(),
        "metadata": model.metadata,
        "payload": payload,
    }
    return json.dumps(doc, sort_keys=True)


def deserialize_model(document: str) -> TrainedModel:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelDocumentError(f"corrupted model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelDocumentError("not a model document")
    if doc.get("version") != MODEL_VERSION:
        raise ModelDocumentError(
            f"unsupported model document version {doc.get('version')!r} "
            f"(expected {MODEL_VERSION})"
        )
    try:
        family = doc["family"]
        hp = HyperParams.from_dict(doc["hyperparams"])
        columns = tuple(ColumnInfo.from_dict(c) for c in doc["columns"])
        transform = NumericTransform.from_dict(doc["transform"])
        raw_payload = doc["payload"]
        if family == FAMILY_GBDT:
            payload = {
                "base_score": float(raw_payload["base_score"]),
                "trees": [_gbdt.node_from_dict(t) for t in raw_payload["trees"]],
            }
        elif family == FAMILY_FOREST:
            payload = {
                "trees": [_forest.forest_node_from_dict(t) for t in raw_payload["trees"]]
            }
        elif family == FAMILY_LOGISTIC:
            payload = _logistic.LogisticFit.from_dict(raw_payload)
        else:
            raise ModelDocumentError(f"unknown family {family!r}")
        return TrainedModel(
            hyperparams=hp,
            columns=columns,
            sentinel=doc["sentinel"],
            transform=transform,
            payload=payload,
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelDocumentError):
            raise
        raise ModelDocumentError(f"corrupted model document: {exc}") from exc
