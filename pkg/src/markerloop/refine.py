"""The exclude-and-retrain loop: train, attribute, collect reviewer verdicts
on the top-k markers, grow the exclusion set, repeat until every high-impact
marker is approved (or the iteration cap is hit).

Exclusion sets grow monotonically; an excluded marker never reappears in any
later design matrix, model split, or attribution entry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .explain import (
    METHOD_GAIN,
    METHOD_PERMUTATION,
    AttributionReport,
    gain_importance,
    permutation_importance,
    top_k as rank_top_k,
)
from .metrics import MetricsReport, RocCurve
from .models import FAMILY_LOGISTIC, HyperParams
from .pipeline import ProtocolResult, prepare, run_protocol
from .search import TASK_SURVIVAL, preset as lookup_preset
from .table import PatientTable

logger = logging.getLogger(__name__)

VERDICT_APPROVED = "approved"
VERDICT_REJECTED = "rejected"

STATUS_RUNNING = "running"
STATUS_AWAITING = "awaiting_review"
STATUS_CLOSED = "closed"
STATUS_FAILED = "failed"


class StateError(RuntimeError):
    """Operation not allowed in the experiment's current state."""


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce an experiment; seeds are explicit."""

    dataset: str
    target: str
    schema: str = "builtin"
    positive_class: str | None = None
    task: str = TASK_SURVIVAL
    preset_name: str = "lgbm-like"
    hyperparams: HyperParams | None = None  # overrides the preset
    attribution: str = METHOD_GAIN
    k: int = 5
    base_seed: int = 0
    rebalance_ratio: float | None = 1.0
    top_k: int = 10
    max_iterations: int = 10
    fractions: tuple[float, float, float] = (0.75, 0.05, 0.20)
    drop_threshold: float = 0.75
    decision_threshold: float = 0.5
    permutation_repeats: int = 10
    exclude: tuple[str, ...] = ()  # clinician pre-exclusions

    def resolve_hyperparams(self) -> HyperParams:
        if self.hyperparams is not None:
            return self.hyperparams
        return lookup_preset(self.preset_name, self.task)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "target": self.target,
            "schema": self.schema,
            "positive_class": self.positive_class,
            "task": self.task,
            "preset_name": self.preset_name,
            "hyperparams": None if self.hyperparams is None else self.hyperparams.to_dict(),
            "attribution": self.attribution,
            "k": self.k,
            "base_seed": self.base_seed,
            "rebalance_ratio": self.rebalance_ratio,
            "top_k": self.top_k,
            "max_iterations": self.max_iterations,
            "fractions": list(self.fractions),
            "drop_threshold": self.drop_threshold,
            "decision_threshold": self.decision_threshold,
            "permutation_repeats": self.permutation_repeats,
            "exclude": list(self.exclude),
        }

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        doc = dict(doc)
        hp = doc.get("hyperparams")
        doc["hyperparams"] = None if hp is None else HyperParams.from_dict(hp)
        doc["fractions"] = tuple(doc.get("fractions", (0.75, 0.05, 0.20)))
        doc["exclude"] = tuple(doc.get("exclude", ()))
        return RunConfig(**doc)


@dataclass(frozen=True)
class Decision:
    marker: str
    verdict: str
    note: str = ""
    timestamp: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in (VERDICT_APPROVED, VERDICT_REJECTED):
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "marker": self.marker,
            "verdict": self.verdict,
            "note": self.note,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_dict(doc: dict) -> "Decision":
        return Decision(doc["marker"], doc["verdict"], doc.get("note", ""), doc.get("timestamp", ""))


@dataclass
class Iteration:
    index: int
    exclusions: tuple[str, ...]  # in force while training this iteration
    status: str = STATUS_RUNNING
    averaged_test: MetricsReport | None = None
    averaged_val: MetricsReport | None = None
    per_split_test: tuple[MetricsReport, ...] = ()
    attribution: AttributionReport | None = None
    top_markers: tuple[tuple[str, float], ...] = ()
    roc: RocCurve | None = None
    decisions: tuple[Decision, ...] | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "exclusions": list(self.exclusions),
            "status": self.status,
            "averaged_test": None if self.averaged_test is None else self.averaged_test.to_dict(),
            "averaged_val": None if self.averaged_val is None else self.averaged_val.to_dict(),
            "per_split_test": [r.to_dict() for r in self.per_split_test],
            "attribution": None if self.attribution is None else self.attribution.to_dict(),
            "top_markers": [[m, s] for m, s in self.top_markers],
            "roc": None if self.roc is None else self.roc.points(),
            "decisions": None if self.decisions is None else [d.to_dict() for d in self.decisions],
            "error": self.error,
        }

    @staticmethod
    def from_dict(doc: dict) -> "Iteration":
        roc = None
        if doc.get("roc"):
            pts = doc["roc"]
            roc = RocCurve(
                np.asarray([p["fpr"] for p in pts]),
                np.asarray([p["tpr"] for p in pts]),
                np.asarray([p["threshold"] for p in pts]),
            )
        return Iteration(
            index=doc["index"],
            exclusions=tuple(doc["exclusions"]),
            status=doc["status"],
            averaged_test=(
                MetricsReport.from_dict(doc["averaged_test"]) if doc.get("averaged_test") else None
            ),
            averaged_val=(
                MetricsReport.from_dict(doc["averaged_val"]) if doc.get("averaged_val") else None
            ),
            per_split_test=tuple(MetricsReport.from_dict(r) for r in doc.get("per_split_test", ())),
            attribution=(
                AttributionReport.from_dict(doc["attribution"]) if doc.get("attribution") else None
            ),
            top_markers=tuple((m, float(s)) for m, s in doc.get("top_markers", ())),
            roc=roc,
            decisions=(
                tuple(Decision.from_dict(d) for d in doc["decisions"])
                if doc.get("decisions") is not None
                else None
            ),
            error=doc.get("error"),
        )


@dataclass
class Experiment:
    id: str
    config: RunConfig
    fingerprint: str = ""
    iterations: list[Iteration] = field(default_factory=list)
    terminal: dict | None = None

    @property
    def exclusions(self) -> tuple[str, ...]:
        """Clinician pre-exclusions plus every rejection so far, sorted."""
        out = set(self.config.exclude)
        for it in self.iterations:
            if it.decisions:
                out.update(d.marker for d in it.decisions if d.verdict == VERDICT_REJECTED)
        return tuple(sorted(out))

    @property
    def status(self) -> str:
        if self.terminal is not None:
            return "terminal"
        if not self.iterations:
            return "idle"
        return self.iterations[-1].status

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "iterations": [it.to_dict() for it in self.iterations],
            "terminal": self.terminal,
        }

    @staticmethod
    def from_dict(doc: dict) -> "Experiment":
        return Experiment(
            id=doc["id"],
            config=RunConfig.from_dict(doc["config"]),
            fingerprint=doc.get("fingerprint", ""),
            iterations=[Iteration.from_dict(d) for d in doc.get("iterations", [])],
            terminal=doc.get("terminal"),
        )


def _attribute(
    config: RunConfig, result: ProtocolResult, data
) -> AttributionReport:
    """One aggregated report: mean per-marker score across the k split models.

    Gain reads the trained trees; permutation runs against each split's
    validation rows (never test) with seeds derived from the base seed.
    """
    method = config.attribution
    hp = config.resolve_hyperparams()
    if method == METHOD_GAIN and hp.family == FAMILY_LOGISTIC:
        method = METHOD_PERMUTATION  # gain is undefined for linear models
    reports = []
    for i, outcome in enumerate(result.outcomes):
        if method == METHOD_GAIN:
            reports.append(gain_importance(outcome.model))
        else:
            reports.append(
                permutation_importance(
                    outcome.model,
                    data.X.take_rows(outcome.split.val),
                    data.y[outcome.split.val],
                    repeats=config.permutation_repeats,
                    seed=config.base_seed + i,
                )
            )
    markers = reports[0].markers
    entries = tuple(
        (m, float(np.mean([r.score(m) for r in reports]))) for m in markers
    )
    col_labels = [label for label, _ in reports[0].column_scores]
    col_scores = tuple(
        (
            label,
            float(
                np.mean([dict(r.column_scores)[label] for r in reports])
            ),
        )
        for label in col_labels
    )
    first = reports[0]
    return AttributionReport(
        method=method,
        entries=entries,
        column_scores=col_scores,
        metric=first.metric,
        baseline=first.baseline,
        repeats=first.repeats,
        seed=first.seed,
    )


def run_iteration(experiment: Experiment, table: PatientTable) -> Iteration:
    """Train and attribute the next iteration; leaves it awaiting review."""
    if experiment.terminal is not None:
        raise StateError("experiment is terminal")
    if experiment.iterations and experiment.iterations[-1].status in (
        STATUS_RUNNING,
        STATUS_AWAITING,
    ):
        raise StateError(
            f"iteration {experiment.iterations[-1].index} is {experiment.iterations[-1].status}"
        )
    index = len(experiment.iterations)
    exclusions = experiment.exclusions
    record = Iteration(index=index, exclusions=exclusions)
    experiment.iterations.append(record)
    config = experiment.config
    try:
        data = prepare(
            table,
            config.target,
            positive_class=config.positive_class,
            drop_threshold=config.drop_threshold,
            exclude=exclusions,
        )
        if not experiment.fingerprint:
            experiment.fingerprint = data.fingerprint
        result = run_protocol(
            data,
            config.resolve_hyperparams(),
            k=config.k,
            base_seed=config.base_seed,
            fractions=config.fractions,
            rebalance_ratio=config.rebalance_ratio,
            threshold=config.decision_threshold,
        )
        report = _attribute(config, result, data)
        record.averaged_test = result.averaged_test
        record.averaged_val = result.averaged_val
        record.per_split_test = tuple(o.test_report for o in result.outcomes)
        record.attribution = report
        record.top_markers = tuple(rank_top_k(report, config.top_k))
        record.roc = result.outcomes[0].test_curve
        record.status = STATUS_AWAITING
    except Exception as exc:
        record.status = STATUS_FAILED
        record.error = f"{type(exc).__name__}: {exc}"
        logger.exception("iteration %d failed", index)
        raise
    return record


def check_termination(
    experiment: Experiment, decisions: tuple[Decision, ...]
) -> tuple[bool, bool]:
    """(terminal, converged): terminal when every reviewed marker is approved
    or the iteration cap is reached; converged only in the first case."""
    all_approved = all(d.verdict == VERDICT_APPROVED for d in decisions)
    if all_approved:
        return True, True
    if len(experiment.iterations) >= experiment.config.max_iterations:
        logger.warning(
            "experiment %s hit max_iterations=%d without convergence",
            experiment.id,
            experiment.config.max_iterations,
        )
        return True, False
    return False, False


def submit_decisions(
    experiment: Experiment, index: int, decisions: list[Decision]
) -> Experiment:
    """Record verdicts for exactly the iteration's top-k markers; rejected
    markers join the exclusion set; resubmission is a conflict."""
    if index >= len(experiment.iterations):
        raise StateError(f"no iteration {index}")
    record = experiment.iterations[index]
    if record.status == STATUS_CLOSED:
        raise StateError(f"iteration {index} already reviewed")
    if record.status != STATUS_AWAITING:
        raise StateError(f"iteration {index} is {record.status}, not awaiting review")

    expected = {m for m, _ in record.top_markers}
    seen: set[str] = set()
    for d in decisions:
        if d.marker in seen:
            raise StateError(f"duplicate decision for marker {d.marker!r}")
        seen.add(d.marker)
        if d.marker in record.exclusions:
            raise StateError(f"marker {d.marker!r} is already excluded")
        if d.marker not in expected:
            raise StateError(
                f"marker {d.marker!r} is not among this iteration's top-{len(expected)}"
            )
    missing = expected - seen
    if missing:
        raise StateError(f"decisions missing for top-k markers: {sorted(missing)}")

    record.decisions = tuple(decisions)
    record.status = STATUS_CLOSED
    terminal, converged = check_termination(experiment, record.decisions)
    if terminal:
        experiment.terminal = {"converged": converged}
    return experiment


def ablate(
    table: PatientTable,
    config: RunConfig,
    marker: str,
    exclusions: tuple[str, ...] = (),
) -> tuple[MetricsReport, MetricsReport]:
    """Retrain twice on identical splits and seeds, with and without one
    marker; returns (baseline, ablated) averaged test reports."""
    if marker in exclusions:
        raise StateError(f"marker {marker!r} is already excluded")
    if marker not in table.schema:
        raise KeyError(f"unknown marker {marker!r}")
    hp = config.resolve_hyperparams()
    common = dict(
        k=config.k,
        base_seed=config.base_seed,
        fractions=config.fractions,
        rebalance_ratio=config.rebalance_ratio,
        threshold=config.decision_threshold,
    )
    base_data = prepare(
        table, config.target, config.positive_class, config.drop_threshold, exclude=exclusions
    )
    baseline = run_protocol(base_data, hp, **common)
    ablated_data = prepare(
        table,
        config.target,
        config.positive_class,
        config.drop_threshold,
        exclude=exclusions + (marker,),
    )
    ablated = run_protocol(ablated_data, hp, **common)
    return baseline.averaged_test, ablated.averaged_test
