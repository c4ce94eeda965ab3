"""The shared train/evaluate protocol: prepare a table once, then run k
seeded resplits of fit-preprocess / rebalance / train / score.

Everything downstream (grid search, refinement iterations, ablations, the
CLI) goes through this module so results are comparable and reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics as met
from .models import HyperParams, TrainedModel, train
from .preprocess import (
    DesignMatrix,
    ImputePolicy,
    NumericTransform,
    Split,
    drop_sparse_markers,
    encode,
    impute,
    rebalance,
    split as make_split,
    SplitSpec,
)
from .table import PatientTable, select_target


@dataclass(frozen=True)
class PreparedData:
    """Feature matrix + labels after target selection, imputation, encoding."""

    X: DesignMatrix
    y: np.ndarray
    features: PatientTable
    dropped_sparse: tuple[str, ...]
    fingerprint: str
    target: str
    positive_class: str


def prepare(
    table: PatientTable,
    target: str,
    positive_class: str | None = None,
    drop_threshold: float = 0.75,
    impute_policy: ImputePolicy | None = None,
    exclude: tuple[str, ...] = (),
) -> PreparedData:
    """Table -> (X, y): drop excluded markers, drop sparse markers, select the
    target, impute, one-hot encode."""
    fingerprint = table.fingerprint()
    exclude = tuple(m for m in exclude if m in table.schema)
    if exclude:
        table = table.drop_markers(exclude)
    table, dropped = drop_sparse_markers(table, drop_threshold, protected=(target,))
    features, y = select_target(table, target, positive_class)
    if len(features.schema) < 2:
        raise ValueError("fewer than 2 feature markers remain after exclusions")
    policy = impute_policy or ImputePolicy()
    imputed = impute(features, policy)
    X = encode(imputed, sentinel=policy.numeric_constant)
    if positive_class is None:
        from .table import default_positive_class

        positive_class = default_positive_class(
            tuple(
                c
                for c in (table.schema[target].categories or ())
                if c != "⟨missing⟩"
            )
        )
    return PreparedData(X, y, features, tuple(dropped), fingerprint, target, positive_class)


@dataclass(frozen=True)
class SplitOutcome:
    split: Split
    model: TrainedModel
    val_report: met.MetricsReport
    test_report: met.MetricsReport
    test_curve: met.RocCurve


@dataclass(frozen=True)
class ProtocolResult:
    outcomes: tuple[SplitOutcome, ...]
    averaged_val: met.MetricsReport
    averaged_test: met.MetricsReport

    @property
    def models(self) -> tuple[TrainedModel, ...]:
        return tuple(o.model for o in self.outcomes)


def run_protocol(
    data: PreparedData,
    hp: HyperParams,
    k: int = 5,
    base_seed: int = 0,
    fractions: tuple[float, float, float] = (0.75, 0.05, 0.20),
    stratified: bool = True,
    rebalance_ratio: float | None = 1.0,
    transform_kind: str = "identity",
    threshold: float = 0.5,
) -> ProtocolResult:
    """k Monte Carlo resplits; per split: fit the numeric transform on train
    rows only, upsample training positives, train, and score on val and test."""
    X, y = data.X, data.y
    outcomes = []
    for i in range(k):
        seed = base_seed + i
        sp = make_split(X.n_rows, y, SplitSpec(fractions, seed=seed, stratified=stratified))
        transform = NumericTransform.fit(X, transform_kind, sp.train)
        train_rows = (
            rebalance(sp.train, y, rebalance_ratio, seed=seed)
            if rebalance_ratio is not None
            else sp.train
        )
        model = train(
            X.take_rows(train_rows),
            y[train_rows],
            hp.with_seed(seed),
            transform=transform,
            metadata={"data_fingerprint": data.fingerprint, "split_seed": seed},
        )
        from .models import predict_proba

        val_scores = predict_proba(model, X.take_rows(sp.val))
        test_scores = predict_proba(model, X.take_rows(sp.test))
        val_report, _ = met.evaluate_scores(y[sp.val], val_scores, threshold)
        test_report, test_curve = met.evaluate_scores(y[sp.test], test_scores, threshold)
        outcomes.append(SplitOutcome(sp, model, val_report, test_report, test_curve))
    return ProtocolResult(
        tuple(outcomes),
        met.mean_reports([o.val_report for o in outcomes]),
        met.mean_reports([o.test_report for o in outcomes]),
    )
