"""Preprocessing contract: sparse-marker removal, imputation, one-hot
encoding, optional numeric transforms, deterministic splits, Monte Carlo
resplits, and positive-class upsampling.

All operations are pure functions of (input, seed); outputs are immutable.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .schema import CATEGORICAL, NUMERIC, MarkerSchema, ROLE_TARGET
from .table import PatientTable, TableError

logger = logging.getLogger(__name__)

MISSING_CATEGORY = "⟨missing⟩"  # ⟨missing⟩

KIND_NUMERIC = "numeric"
KIND_INDICATOR = "indicator"


@dataclass(frozen=True)
class ColumnInfo:
    source: str  # marker the column came from
    label: str  # unique column label ("<marker>" or "<marker>=<category>")
    kind: str  # numeric | indicator

    def to_dict(self) -> dict:
        return {"source": self.source, "label": self.label, "kind": self.kind}

    @staticmethod
    def from_dict(doc: dict) -> "ColumnInfo":
        return ColumnInfo(doc["source"], doc["label"], doc["kind"])


@dataclass(frozen=True)
class DesignMatrix:
    """Dense numeric matrix with labelled, kind-tagged columns.

    ``sentinel`` is the constant that replaced MISSING numeric cells, kept so
    tree training can route sentinel values through a learned default
    direction.
    """

    values: np.ndarray
    columns: tuple[ColumnInfo, ...]
    sentinel: float | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("design matrix must be 2-D")
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column metadata does not match matrix width")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix contains non-finite cells")
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.columns)

    @property
    def sources(self) -> tuple[str, ...]:
        """Distinct source markers in first-appearance order."""
        seen: list[str] = []
        for c in self.columns:
            if c.source not in seen:
                seen.append(c.source)
        return tuple(seen)

    def columns_of(self, source: str) -> list[int]:
        idx = [i for i, c in enumerate(self.columns) if c.source == source]
        if not idx:
            raise KeyError(f"no columns derive from marker {source!r}")
        return idx

    def index_of(self, label: str) -> int:
        for i, c in enumerate(self.columns):
            if c.label == label:
                return i
        raise KeyError(f"no column labelled {label!r}")

    def take_rows(self, rows: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(self.values[rows].copy(), self.columns, self.sentinel)

    def replace_values(self, values: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(values, self.columns, self.sentinel)


@dataclass(frozen=True)
class ImputePolicy:
    """Numeric MISSING -> constant sentinel; categorical MISSING -> an
    explicit missing category."""

    numeric_constant: float = -999.0

    def bind(self, schema: MarkerSchema) -> "ImputePolicy":
        """Check the sentinel lies outside every declared numeric range."""
        for m in schema:
            if m.kind == NUMERIC:
                lo, hi = m.numeric_range  # type: ignore[misc]
                if lo <= self.numeric_constant <= hi:
                    raise ValueError(
                        f"imputation sentinel {self.numeric_constant} falls inside the "
                        f"declared range of {m.name!r} ({lo}, {hi})"
                    )
        return self


def drop_sparse_markers(
    table: PatientTable,
    threshold: float = 0.75,
    protected: Iterable[str] = (),
) -> tuple[PatientTable, list[str]]:
    """Drop markers whose missing fraction strictly exceeds ``threshold``.

    A marker at exactly the threshold is retained. The target marker (by role
    or via ``protected``) is never dropped; if it exceeds the threshold this
    raises instead.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must lie in (0, 1]")
    protected = set(protected) | {
        m.name for m in table.schema if m.role == ROLE_TARGET
    }
    dropped: list[str] = []
    for m in table.schema:
        frac = table.missing_fraction(m.name)
        if frac > threshold:
            if m.name in protected:
                raise TableError(
                    f"target marker {m.name!r} exceeds the missingness threshold "
                    f"({frac:.1%} > {threshold:.0%})"
                )
            dropped.append(m.name)
    if dropped:
        logger.info("dropping %d sparse markers: %s", len(dropped), dropped)
        return table.drop_markers(dropped), dropped
    return table, dropped


def impute(table: PatientTable, policy: ImputePolicy | None = None) -> PatientTable:
    """Fill every MISSING cell; idempotent.

    Numeric cells get the policy sentinel. Categorical cells get the literal
    missing category, which is added to every categorical marker's category
    set so the one-hot layout is identical across datasets.
    """
    policy = (policy or ImputePolicy()).bind(table.schema)
    schema = table.schema
    columns: dict[str, object] = {}
    for m in table.schema:
        if m.kind == NUMERIC:
            col = table.numeric_values(m.name).copy()
            col[np.isnan(col)] = policy.numeric_constant
            columns[m.name] = col
        else:
            if MISSING_CATEGORY not in (m.categories or ()):
                schema = schema.with_categories(
                    m.name, tuple(m.categories or ()) + (MISSING_CATEGORY,)
                )
            col = table.categorical_values(m.name).copy()
            mask = np.array([v is None for v in col], dtype=bool)
            col[mask] = MISSING_CATEGORY
            columns[m.name] = col
    return PatientTable(schema, columns)  # type: ignore[arg-type]


def encode(table: PatientTable, sentinel: float | None = -999.0) -> DesignMatrix:
    """One-hot encode a fully imputed table into a dense design matrix.

    Numeric markers pass through as one column each; categorical markers
    expand to one indicator column per category, categories in lexicographic
    order, markers in schema order. A categorical value outside the marker's
    category set lands in the missing-category bucket.
    """
    n = table.row_count
    cols: list[ColumnInfo] = []
    arrays: list[np.ndarray] = []
    for m in table.schema:
        if m.kind == NUMERIC:
            col = table.numeric_values(m.name)
            if np.isnan(col).any():
                row = int(np.nonzero(np.isnan(col))[0][0])
                raise TableError(f"residual MISSING cell at row {row}, marker {m.name!r}")
            cols.append(ColumnInfo(m.name, m.name, KIND_NUMERIC))
            arrays.append(col.astype(float))
        else:
            values = table.categorical_values(m.name)
            none_rows = [i for i, v in enumerate(values) if v is None]
            if none_rows:
                raise TableError(
                    f"residual MISSING cell at row {none_rows[0]}, marker {m.name!r}"
                )
            cats = sorted(m.categories or ())
            cat_index = {c: i for i, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            fallback = cat_index.get(MISSING_CATEGORY)
            for i, v in enumerate(values):
                j = cat_index.get(v, fallback)
                if j is None:
                    raise TableError(
                        f"value {v!r} of marker {m.name!r} is outside the category set "
                        "and no missing-category bucket exists (impute first)"
                    )
                block[i, j] = 1.0
            for c in cats:
                cols.append(ColumnInfo(m.name, f"{m.name}={c}", KIND_INDICATOR))
            arrays.append(block)
    values_mat = (
        np.column_stack(arrays) if arrays else np.zeros((n, 0))
    )
    return DesignMatrix(values_mat, tuple(cols), sentinel=sentinel)


TRANSFORM_KINDS = ("identity", "minmax", "rank_uniform", "rank_normal")


@dataclass(frozen=True)
class NumericTransform:
    """Per-column transform fitted on training rows only.

    The default is identity: alternative numeric transforms were evaluated
    and none improved results, so they stay available but off.
    """

    kind: str = "identity"
    params: dict = field(default_factory=dict)  # label -> fitted state

    @staticmethod
    def fit(
        matrix: DesignMatrix, kind: str = "identity", train_rows: np.ndarray | None = None
    ) -> "NumericTransform":
        if kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {kind!r}")
        if kind == "identity":
            return NumericTransform("identity", {})
        rows = np.arange(matrix.n_rows) if train_rows is None else np.asarray(train_rows)
        params: dict = {}
        for j, col in enumerate(matrix.columns):
            if col.kind != KIND_NUMERIC:
                continue
            train_vals = matrix.values[rows, j]
            if kind == "minmax":
                params[col.label] = (float(train_vals.min()), float(train_vals.max()))
            else:
                params[col.label] = sorted(float(v) for v in train_vals)
        return NumericTransform(kind, params)

    def apply(self, matrix: DesignMatrix) -> DesignMatrix:
        if self.kind == "identity":
            return matrix
        out = matrix.values.copy()
        for j, col in enumerate(matrix.columns):
            if col.kind != KIND_NUMERIC:
                continue
            x = out[:, j]
            if self.kind == "minmax":
                lo, hi = self.params[col.label]
                if hi == lo:
                    out[:, j] = 0.0  # degenerate constant column
                else:
                    out[:, j] = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
            else:
                ref = np.asarray(self.params[col.label])
                n = len(ref)
                left = np.searchsorted(ref, x, side="left")
                right = np.searchsorted(ref, x, side="right")
                u = (left + right) / (2.0 * n)
                u = np.clip(u, 1e-7, 1.0 - 1e-7)
                if self.kind == "rank_uniform":
                    out[:, j] = u
                else:
                    out[:, j] = ndtri(u)
        return matrix.replace_values(out)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}

    @staticmethod
    def from_dict(doc: dict) -> "NumericTransform":
        params = {
            k: tuple(v) if isinstance(v, list) and len(v) == 2 and doc["kind"] == "minmax" else v
            for k, v in doc["params"].items()
        }
        return NumericTransform(doc["kind"], params)


def transform_numeric(
    matrix: DesignMatrix, kind: str = "identity", train_rows: np.ndarray | None = None
) -> DesignMatrix:
    """Fit a transform on the training rows and apply it to the whole matrix."""
    return NumericTransform.fit(matrix, kind, train_rows).apply(matrix)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.75, 0.05, 0.20)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self) -> None:
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        for part in (self.train, self.val, self.test):
            part.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)

    def to_dict(self) -> dict:
        return {
            "train": [int(i) for i in self.train],
            "val": [int(i) for i in self.val],
            "test": [int(i) for i in self.test],
        }

    @staticmethod
    def from_dict(doc: dict) -> "Split":
        return Split(
            np.asarray(doc["train"], dtype=int),
            np.asarray(doc["val"], dtype=int),
            np.asarray(doc["test"], dtype=int),
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """(train, val, test) sizes: test and val round half-up, train absorbs
    the remainder."""
    n_test = _round_half_up(fractions[2] * n)
    n_val = _round_half_up(fractions[1] * n)
    n_train = n - n_test - n_val
    if n_train <= 0:
        raise ValueError(f"degenerate split sizes for n={n}")
    return n_train, n_val, n_test


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``; leftovers
    go to the largest fractional remainders (ties: larger weight, lower
    index)."""
    quotas = weights * (total / weights.sum())
    base = np.floor(quotas).astype(int)
    short = total - int(base.sum())
    if short > 0:
        remainders = quotas - base
        order = sorted(
            range(len(weights)),
            key=lambda i: (-remainders[i], -weights[i], i),
        )
        for i in order[:short]:
            base[i] += 1
    return base


def split(n_rows: int, labels: np.ndarray | None, spec: SplitSpec) -> Split:
    """Deterministic (seeded) train/val/test partition.

    Stratified by label when requested; each partition's size per stratum is
    within one row of the exact proportional share, and leftover rows land in
    train.
    """
    if n_rows < 20:
        raise ValueError("refusing to split fewer than 20 rows")
    n_train, n_val, n_test = partition_sizes(n_rows, spec.fractions)
    rng = np.random.default_rng(spec.seed)

    if spec.stratified:
        if labels is None:
            raise ValueError("stratified split needs labels")
        labels = np.asarray(labels)
        if len(labels) != n_rows:
            raise ValueError("labels length does not match n_rows")
        strata = [np.nonzero(labels == v)[0] for v in np.unique(labels)]
        sizes = np.array([len(s) for s in strata], dtype=float)
        if sizes.min() < 3:
            raise ValueError("a stratum has fewer than 3 rows; disable stratification")
        test_alloc = _largest_remainder(n_test, sizes)
        val_alloc = _largest_remainder(n_val, sizes)
        train_idx: list[np.ndarray] = []
        val_idx: list[np.ndarray] = []
        test_idx: list[np.ndarray] = []
        for s, (stratum, t_s, v_s) in enumerate(zip(strata, test_alloc, val_alloc)):
            if t_s + v_s > len(stratum):
                raise ValueError(f"stratum {s} too small for requested fractions")
            perm = rng.permutation(stratum)
            test_idx.append(perm[:t_s])
            val_idx.append(perm[t_s : t_s + v_s])
            train_idx.append(perm[t_s + v_s :])
        return Split(
            np.sort(np.concatenate(train_idx)),
            np.sort(np.concatenate(val_idx)),
            np.sort(np.concatenate(test_idx)),
        )

    perm = rng.permutation(n_rows)
    return Split(
        np.sort(perm[n_test + n_val :]),
        np.sort(perm[n_test : n_test + n_val]),
        np.sort(perm[:n_test]),
    )


def mc_splits(
    n_rows: int,
    labels: np.ndarray | None,
    k: int = 5,
    base_seed: int = 0,
    fractions: tuple[float, float, float] = (0.75, 0.05, 0.20),
    stratified: bool = True,
) -> list[Split]:
    """k independent Monte Carlo resplits with seeds base_seed .. base_seed+k-1."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return [
        split(n_rows, labels, SplitSpec(fractions, seed=base_seed + i, stratified=stratified))
        for i in range(k)
    ]


def rebalance(
    train_rows: np.ndarray,
    labels: np.ndarray,
    target_ratio: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Upsample positive training rows to ``target_ratio`` positives per
    negative.

    Negatives are kept exactly once and never duplicated; every original row
    stays in the result; duplicates are drawn with replacement from the
    positives (seeded).
    """
    train_rows = np.asarray(train_rows)
    labels = np.asarray(labels)
    if target_ratio <= 0:
        raise ValueError("target_ratio must be positive")
    y = labels[train_rows]
    pos = train_rows[y == 1]
    neg = train_rows[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("rebalance needs at least one row of each class")
    target = math.ceil(target_ratio * len(neg))
    shortfall = target - len(pos)
    if shortfall <= 0:
        return train_rows.copy()
    rng = np.random.default_rng(seed)
    duplicates = rng.choice(pos, size=shortfall, replace=True)
    return np.concatenate([train_rows, duplicates])


def export_split(split_: Split, path: str | Path) -> None:
    """Persist index arrays so any run can be reproduced for audit."""
    Path(path).write_text(json.dumps(split_.to_dict(), indent=0) + "\n", encoding="utf-8")


def import_split(path: str | Path) -> Split:
    return Split.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
