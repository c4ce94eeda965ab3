"""Per-marker impact scores behind a pluggable attribution interface.

Two reference backends: gain (sum of realized split gains per source marker,
tree models only) and permutation (metric drop after jointly permuting a
marker's columns, any model). Scores aggregate indicator columns to their
source marker; the per-column granularity is retained alongside.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .metrics import binarize, confusion, classification_metrics, roc_auc
from .models import FAMILY_FOREST, FAMILY_GBDT, ModelError, TrainedModel, predict_proba
from .models.forest import ForestLeaf
from .models.gbdt import Leaf
from .preprocess import DesignMatrix

METHOD_GAIN = "gain"
METHOD_PERMUTATION = "permutation"


@dataclass(frozen=True)
class AttributionReport:
    """Ranked per-marker impact scores with the method that produced them."""

    method: str
    entries: tuple[tuple[str, float], ...]  # (source marker, score)
    column_scores: tuple[tuple[str, float], ...]  # (column label, score)
    metric: str | None = None
    baseline: float | None = None
    repeats: int | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        for name, score in self.entries:
            if not np.isfinite(score):
                raise ValueError(f"non-finite impact score for {name!r}")

    def score(self, marker: str) -> float:
        for name, s in self.entries:
            if name == marker:
                return s
        raise KeyError(f"marker {marker!r} not in report")

    @property
    def markers(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "entries": [[n, s] for n, s in self.entries],
            "column_scores": [[n, s] for n, s in self.column_scores],
            "metric": self.metric,
            "baseline": self.baseline,
            "repeats": self.repeats,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "AttributionReport":
        return AttributionReport(
            method=doc["method"],
            entries=tuple((n, float(s)) for n, s in doc["entries"]),
            column_scores=tuple((n, float(s)) for n, s in doc["column_scores"]),
            metric=doc.get("metric"),
            baseline=doc.get("baseline"),
            repeats=doc.get("repeats"),
            seed=doc.get("seed"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["marker", "score"])
        for name, s in sorted(self.entries, key=lambda e: (-e[1], e[0])):
            writer.writerow([name, repr(float(s))])
        return buf.getvalue()


def gain_importance(model: TrainedModel) -> AttributionReport:
    """Sum each split's realized gain onto its column, then onto its source
    marker. Markers the ensemble never splits on score exactly 0."""
    if model.family not in (FAMILY_GBDT, FAMILY_FOREST):
        raise ModelError(
            f"gain importance needs a tree model, not {model.family!r}; "
            "use permutation importance instead"
        )
    col_scores = np.zeros(len(model.columns))

    def walk(node) -> None:
        if isinstance(node, (Leaf, ForestLeaf)):
            return
        col_scores[node.feature] += node.gain
        walk(node.left)
        walk(node.right)

    for tree in model.payload["trees"]:
        walk(tree)

    by_source: dict[str, float] = {}
    for info, score in zip(model.columns, col_scores):
        by_source[info.source] = by_source.get(info.source, 0.0) + float(score)
    entries = tuple((name, by_source[name]) for name in model.source_markers())
    columns = tuple(
        (info.label, float(s)) for info, s in zip(model.columns, col_scores)
    )
    return AttributionReport(METHOD_GAIN, entries, columns)


def _metric_fn(metric: str):
    if metric == "accuracy":
        def acc(y, scores):
            cm = confusion(np.asarray(y).astype(int), binarize(scores), positive=1)
            return classification_metrics(cm).accuracy
        return acc
    if metric == "auc":
        return lambda y, scores: roc_auc(y, scores)[1]
    raise ValueError(f"unknown permutation metric {metric!r}")


def _project(model: TrainedModel, X: DesignMatrix) -> np.ndarray:
    """Column indices of X carrying the model's inputs, in model order."""
    pos = {label: i for i, label in enumerate(X.labels)}
    try:
        return np.asarray([pos[label] for label in model.column_labels], dtype=int)
    except KeyError as exc:
        raise ModelError(f"evaluation matrix lacks model column {exc}") from exc


def permutation_importance(
    model: TrainedModel,
    X: DesignMatrix,
    y: np.ndarray,
    metric: str = "accuracy",
    repeats: int = 10,
    seed: int = 0,
    markers: list[str] | None = None,
) -> AttributionReport:
    """score(marker) = baseline metric - mean metric after jointly permuting
    all of the marker's columns (one shared row permutation per repeat).

    ``X`` may carry extra markers beyond the model's inputs; the model reads
    only its own columns, so permuting an extra marker provably scores 0.
    By default the report covers exactly the model's input markers.
    """
    if X.n_rows == 0:
        raise ValueError("empty evaluation set")
    y = np.asarray(y).astype(int)
    fn = _metric_fn(metric)
    proj = _project(model, X)

    def predict_values(values: np.ndarray) -> np.ndarray:
        sub = DesignMatrix(values[:, proj].copy(), model.columns, model.sentinel)
        return predict_proba(model, sub)

    baseline = float(fn(y, predict_values(X.values)))
    targets = list(markers) if markers is not None else list(model.source_markers())

    perms = [
        np.random.default_rng([seed, r]).permutation(X.n_rows) for r in range(repeats)
    ]
    entries: list[tuple[str, float]] = []
    column_scores: dict[str, float] = {}
    for name in targets:
        cols = X.columns_of(name)
        drops = []
        for perm in perms:
            values = X.values.copy()
            values[:, cols] = values[perm][:, cols]
            drops.append(baseline - float(fn(y, predict_values(values))))
        score = float(np.mean(drops))
        entries.append((name, score))
        for c in cols:
            column_scores[X.columns[c].label] = score
    return AttributionReport(
        METHOD_PERMUTATION,
        tuple(entries),
        tuple(column_scores.items()),
        metric=metric,
        baseline=baseline,
        repeats=repeats,
        seed=seed,
    )


def top_k(report: AttributionReport, k: int = 10) -> list[tuple[str, float]]:
    """The k highest-impact markers, score-descending, ties by name."""
    if not report.entries:
        raise ValueError("empty attribution report")
    ranked = sorted(report.entries, key=lambda e: (-e[1], e[0]))
    return [(name, float(score)) for name, score in ranked[:k]]
