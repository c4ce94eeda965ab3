"""Evaluation machinery: confusion matrices, the standard classification
metrics, ROC/AUC, and Pearson correlation.

Conventions: degenerate denominators yield 0 (never a division error); AUC
gives half credit to tied scores (Mann-Whitney); the decision threshold for
turning probabilities into labels defaults to 0.5 but is configurable because
upsampling shifts calibration.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .preprocess import DesignMatrix


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    positive_label: object = 1

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.total == 0:
            raise ValueError("empty confusion matrix")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
            self.positive_label,
        )

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "positive_label": self.positive_label,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ConfusionMatrix":
        return ConfusionMatrix(
            doc["tp"], doc["fp"], doc["fn"], doc["tn"], doc.get("positive_label", 1)
        )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    cm: ConfusionMatrix
    auc: float | None = None
    n_test: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "n_test": self.n_test,
            "confusion": self.cm.to_dict(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "MetricsReport":
        return MetricsReport(
            accuracy=doc["accuracy"],
            precision=doc["precision"],
            recall=doc["recall"],
            f1=doc["f1"],
            cm=ConfusionMatrix.from_dict(doc["confusion"]),
            auc=doc.get("auc"),
            n_test=doc.get("n_test", 0),
        )


def confusion(y: np.ndarray, y_hat: np.ndarray, positive=1) -> ConfusionMatrix:
    """Exact counts of a binary prediction against truth."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if len(y) != len(y_hat):
        raise ValueError(f"length mismatch: {len(y)} labels vs {len(y_hat)} predictions")
    if len(y) == 0:
        raise ValueError("empty vectors")
    t = y == positive
    p = y_hat == positive
    return ConfusionMatrix(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
        tn=int(np.sum(~t & ~p)),
        positive_label=positive,
    )


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, recall, F1 from counts; AUC is filled separately."""
    total = cm.total
    accuracy = (cm.tp + cm.tn) / total
    precision = cm.tp / (cm.tp + cm.fp) if (cm.tp + cm.fp) > 0 else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    return MetricsReport(accuracy, precision, recall, f1, cm, auc=None, n_test=total)


@dataclass(frozen=True)
class RocCurve:
    """Threshold sweep of (fpr, tpr) points, including (0,0) and (1,1).

    ``thresholds[i]`` is the score cut-off that produced point i; the leading
    (0,0) point carries +inf.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.fpr, self.tpr, self.thresholds):
            arr.setflags(write=False)
        if np.any(np.diff(self.fpr) < 0) or np.any(np.diff(self.tpr) < 0):
            raise ValueError("ROC points must be non-decreasing in both axes")

    def points(self) -> list[dict]:
        return [
            {"fpr": float(f), "tpr": float(t), "threshold": float(th)}
            for f, t, th in zip(self.fpr, self.tpr, self.thresholds)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(self.fpr, self.tpr, self.thresholds):
            writer.writerow([repr(float(f)), repr(float(t)), repr(float(th))])
        return buf.getvalue()


def roc_auc(y: np.ndarray, scores: np.ndarray) -> tuple[RocCurve, float]:
    """ROC curve by descending-score sweep (tied scores grouped) and its
    trapezoidal AUC, which equals the Mann-Whitney statistic with half credit
    for ties."""
    y = np.asarray(y).astype(int)
    scores = np.asarray(scores, dtype=float)
    if len(y) != len(scores):
        raise ValueError("length mismatch")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order]
    # group boundaries where the (descending) score strictly drops
    distinct = np.nonzero(np.diff(s_sorted))[0]
    group_ends = np.concatenate([distinct, [len(s_sorted) - 1]])
    tp_cum = np.cumsum(y_sorted == 1)[group_ends]
    fp_cum = np.cumsum(y_sorted == 0)[group_ends]
    tpr = np.concatenate([[0.0], tp_cum / n_pos])
    fpr = np.concatenate([[0.0], fp_cum / n_neg])
    thresholds = np.concatenate([[np.inf], s_sorted[group_ends]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds), auc


def binarize(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores) >= threshold).astype(int)


def evaluate_scores(
    y: np.ndarray, scores: np.ndarray, threshold: float = 0.5
) -> tuple[MetricsReport, RocCurve]:
    """Full report for probability scores: threshold -> confusion -> metrics,
    plus ROC/AUC."""
    cm = confusion(np.asarray(y).astype(int), binarize(scores, threshold), positive=1)
    report = classification_metrics(cm)
    curve, auc = roc_auc(y, scores)
    return replace(report, auc=auc), curve


def mean_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of metrics across splits; confusion counts are summed."""
    if not reports:
        raise ValueError("no reports to average")
    cm = reports[0].cm
    for r in reports[1:]:
        cm = cm + r.cm
    aucs = [r.auc for r in reports]
    return MetricsReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        cm=cm,
        auc=None if any(a is None for a in aucs) else float(np.mean(aucs)),
        n_test=int(np.mean([r.n_test for r in reports])),
    )


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Product-moment correlation; raises on constant input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        raise ValueError("need at least two points")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(np.sqrt(np.sum(xd * xd)))
    sy = float(np.sqrt(np.sum(yd * yd)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for constant input")
    r = float(np.sum(xd * yd) / (sx * sy))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    values: np.ndarray
    constant_columns: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "values": [[float(v) for v in row] for row in self.values],
            "constant_columns": list(self.constant_columns),
        }


def correlation_matrix(
    matrix: DesignMatrix, markers: list[str] | None = None
) -> CorrelationMatrix:
    """Pairwise Pearson correlation over the columns of the selected markers.

    Categorical markers enter via their individual indicator columns. A
    constant column contributes a zero row/column (diagonal stays 1) and is
    flagged rather than raising.
    """
    if markers is None:
        col_idx = list(range(matrix.n_cols))
    else:
        col_idx = []
        for m in markers:
            col_idx.extend(matrix.columns_of(m))
    labels = tuple(matrix.columns[j].label for j in col_idx)
    data = matrix.values[:, col_idx]
    k = len(col_idx)
    out = np.eye(k)
    constant = [bool(np.all(data[:, j] == data[0, j])) for j in range(k)]
    for a in range(k):
        for b in range(a + 1, k):
            if constant[a] or constant[b]:
                out[a, b] = out[b, a] = 0.0
            else:
                out[a, b] = out[b, a] = pearson(data[:, a], data[:, b])
    return CorrelationMatrix(
        labels, out, tuple(l for l, c in zip(labels, constant) if c)
    )


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
