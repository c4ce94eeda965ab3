"""Patient tables: raw tabular records bound to a marker schema.

Cells are either a value or MISSING. Numeric columns are stored as float
arrays with NaN standing in for MISSING; categorical columns as object arrays
with None. Tables are immutable after construction.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import CATEGORICAL, NUMERIC, MarkerSchema, MarkerSpec

logger = logging.getLogger(__name__)


class TableError(ValueError):
    """Malformed data file or table operation."""


class _Missing:
    """Singleton sentinel for an absent cell value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False


MISSING = _Missing()

# Markers removed from the feature set alongside a given target, on top of the
# target itself (a survival outcome is not a legitimate input when predicting
# in-hospital kidney injury).
COMPANION_EXCLUSIONS: dict[str, tuple[str, ...]] = {
    "AKI during hospitalization": ("last status",),
}


class PatientTable:
    """Immutable rows-by-markers table bound to a :class:`MarkerSchema`."""

    def __init__(self, schema: MarkerSchema, columns: Mapping[str, np.ndarray]):
        if set(columns) != set(schema.names):
            missing = set(schema.names) - set(columns)
            extra = set(columns) - set(schema.names)
            raise TableError(
                f"columns do not match schema (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise TableError(f"ragged columns: lengths {sorted(lengths)}")
        self._schema = schema
        self._columns: dict[str, np.ndarray] = {}
        for m in schema:
            col = np.asarray(columns[m.name])
            if m.kind == NUMERIC:
                col = col.astype(float, copy=True)
                present = ~np.isnan(col)
                if not np.all(np.isfinite(col[present])):
                    raise TableError(f"non-finite value in numeric column {m.name!r}")
            else:
                col = col.astype(object, copy=True)
            col.setflags(write=False)
            self._columns[m.name] = col
        self._n = lengths.pop() if lengths else 0
        self._fingerprint: str | None = None

    @staticmethod
    def from_rows(
        schema: MarkerSchema, rows: Sequence[Mapping[str, object]]
    ) -> "PatientTable":
        cols: dict[str, list] = {name: [] for name in schema.names}
        for row in rows:
            for m in schema:
                cols[m.name].append(row.get(m.name, MISSING))
        return PatientTable.from_columns(schema, cols)

    @staticmethod
    def from_columns(
        schema: MarkerSchema, columns: Mapping[str, Sequence[object]]
    ) -> "PatientTable":
        arrays: dict[str, np.ndarray] = {}
        for m in schema:
            if m.name not in columns:
                raise TableError(f"missing column {m.name!r}")
            vals = columns[m.name]
            if m.kind == NUMERIC:
                arr = np.empty(len(vals), dtype=float)
                for i, v in enumerate(vals):
                    if v is MISSING or v is None:
                        arr[i] = np.nan
                    else:
                        arr[i] = float(v)  # type: ignore[arg-type]
            else:
                arr = np.empty(len(vals), dtype=object)
                for i, v in enumerate(vals):
                    arr[i] = None if (v is MISSING or v is None) else str(v)
            arrays[m.name] = arr
        return PatientTable(schema, arrays)

    @property
    def schema(self) -> MarkerSchema:
        return self._schema

    @property
    def row_count(self) -> int:
        return self._n

    def numeric_values(self, name: str) -> np.ndarray:
        """Read-only float view with NaN at MISSING positions."""
        if self._schema[name].kind != NUMERIC:
            raise TableError(f"marker {name!r} is not numeric")
        return self._columns[name]

    def categorical_values(self, name: str) -> np.ndarray:
        """Read-only object view with None at MISSING positions."""
        if self._schema[name].kind != CATEGORICAL:
            raise TableError(f"marker {name!r} is not categorical")
        return self._columns[name]

    def cell(self, row: int, name: str):
        col = self._columns[name]
        v = col[row]
        if self._schema[name].kind == NUMERIC:
            return MISSING if np.isnan(v) else float(v)
        return MISSING if v is None else v

    def missing_mask(self, name: str) -> np.ndarray:
        col = self._columns[name]
        if self._schema[name].kind == NUMERIC:
            return np.isnan(col)
        return np.array([v is None for v in col], dtype=bool)

    def missing_count(self, name: str) -> int:
        return int(self.missing_mask(name).sum())

    def missing_fraction(self, name: str) -> float:
        if self._n == 0:
            return 0.0
        return self.missing_count(name) / self._n

    def drop_markers(self, names: Iterable[str]) -> "PatientTable":
        names = set(names)
        unknown = names - set(self._schema.names)
        if unknown:
            raise KeyError(f"unknown markers: {sorted(unknown)}")
        keep = tuple(m for m in self._schema if m.name not in names)
        new_schema = MarkerSchema(keep, version=self._schema.version, note=self._schema.note)
        return PatientTable(new_schema, {m.name: self._columns[m.name] for m in keep})

    def take_rows(self, indices: np.ndarray) -> "PatientTable":
        return PatientTable(
            self._schema, {n: c[indices] for n, c in self._columns.items()}
        )

    def with_schema(self, schema: MarkerSchema) -> "PatientTable":
        """Rebind to a compatible schema (same names/kinds, e.g. new roles)."""
        for m in schema:
            old = self._schema[m.name]
            if old.kind != m.kind:
                raise TableError(f"kind change for marker {m.name!r}")
        return PatientTable(schema, self._columns)

    def fingerprint(self) -> str:
        """Stable content hash of schema + cells, for artifact provenance."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(json.dumps(self._schema.to_dict(), sort_keys=True).encode())
            for m in self._schema:
                col = self._columns[m.name]
                if m.kind == NUMERIC:
                    payload = [None if np.isnan(v) else float(v).hex() for v in col]
                else:
                    payload = list(col)
                h.update(json.dumps([m.name, payload]).encode())
            self._fingerprint = h.hexdigest()
        return self._fingerprint


def ingest_table(
    path: str | Path,
    schema: MarkerSchema,
    strict: bool = False,
    extend_categories: bool = True,
) -> PatientTable:
    """Load a delimited text file into a table bound to ``schema``.

    Header names are matched against marker headers after whitespace trim;
    duplicate headers map onto markers sharing that ``source_header`` in order
    of appearance. File columns outside the schema are ignored with a warning;
    schema markers absent from the file become all-MISSING columns. Empty
    cells are MISSING. Unparseable numeric cells are MISSING unless ``strict``,
    in which case they abort with row/column coordinates.

    With ``extend_categories`` (default), observed category labels not listed
    in the schema are appended to the marker's category set in the returned
    table's schema.
    """
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise TableError(f"cannot read table file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"table file {path} is empty") from None
        header = [h.strip() for h in header]

        # Positional header -> marker assignment; duplicate headers consume
        # successive markers sharing that source header.
        pending: dict[str, list[MarkerSpec]] = {}
        for m in schema:
            pending.setdefault(m.header, []).append(m)
        col_to_marker: dict[int, MarkerSpec] = {}
        for idx, h in enumerate(header):
            queue = pending.get(h)
            if queue:
                col_to_marker[idx] = queue.pop(0)
            else:
                logger.warning("ignoring column %r not in schema (%s)", h, path.name)
        matched = {m.name for m in col_to_marker.values()}
        for m in schema:
            if m.name not in matched:
                logger.warning(
                    "marker %r absent from %s; filling with MISSING", m.name, path.name
                )

        data: dict[str, list] = {name: [] for name in schema.names}
        n_rows = 0
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                raise TableError(
                    f"{path}:{row_idx + 2}: expected {len(header)} cells, got {len(row)}"
                )
            n_rows += 1
            seen: set[str] = set()
            for col_idx, marker in col_to_marker.items():
                raw = row[col_idx].strip()
                seen.add(marker.name)
                if raw == "":
                    data[marker.name].append(MISSING)
                    continue
                if marker.kind == NUMERIC:
                    try:
                        value = float(raw)
                        if not np.isfinite(value):
                            raise ValueError("non-finite")
                    except ValueError:
                        if strict:
                            raise TableError(
                                f"{path}: row {row_idx + 2}, column {header[col_idx]!r}: "
                                f"cannot parse numeric value {raw!r}"
                            ) from None
                        logger.debug(
                            "row %d column %r: unparseable numeric %r -> MISSING",
                            row_idx + 2,
                            header[col_idx],
                            raw,
                        )
                        value = None
                    data[marker.name].append(MISSING if value is None else value)
                else:
                    data[marker.name].append(raw)
            for name in schema.names:
                if name not in seen and name not in matched:
                    data[name].append(MISSING)

    out_schema = schema
    if extend_categories:
        for m in schema:
            if m.kind != CATEGORICAL:
                continue
            observed = {v for v in data[m.name] if v is not MISSING}
            novel = sorted(observed - set(m.categories or ()))
            if novel:
                logger.warning(
                    "marker %r: extending categories with observed values %s",
                    m.name,
                    novel,
                )
                out_schema = out_schema.with_categories(
                    m.name, tuple(m.categories or ()) + tuple(novel)
                )

    table = PatientTable.from_columns(out_schema, data)
    assert table.row_count == n_rows
    return table


def export_table(table: PatientTable, path: str | Path) -> None:
    """Write a table back to delimited text; inverse of :func:`ingest_table`."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([m.header for m in table.schema])
        for i in range(table.row_count):
            row = []
            for m in table.schema:
                v = table.cell(i, m.name)
                if v is MISSING:
                    row.append("")
                elif m.kind == NUMERIC:
                    row.append(repr(float(v)))
                else:
                    row.append(str(v))
            writer.writerow(row)


@dataclass(frozen=True)
class RangeViolation:
    marker: str
    row: int
    value: float
    declared: tuple[float, float]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[RangeViolation, ...]
    rows_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return f"all numeric cells within declared ranges ({self.rows_checked} rows)"
        lines = [f"{len(self.violations)} out-of-range cells:"]
        for v in self.violations:
            lo, hi = v.declared
            lines.append(f"  row {v.row}: {v.marker} = {v.value} outside [{lo}, {hi}]")
        return "\n".join(lines)


def validate_ranges(table: PatientTable) -> ValidationReport:
    """Report every present numeric cell outside its marker's declared range.

    MISSING cells are never violations. Report-only; the table is untouched.
    """
    violations: list[RangeViolation] = []
    for m in table.schema:
        if m.kind != NUMERIC:
            continue
        lo, hi = m.numeric_range  # type: ignore[misc]
        col = table.numeric_values(m.name)
        present = ~np.isnan(col)
        bad = present & ((col < lo) | (col > hi))
        for row in np.nonzero(bad)[0]:
            violations.append(
                RangeViolation(m.name, int(row), float(col[row]), (float(lo), float(hi)))
            )
    return ValidationReport(tuple(violations), table.row_count)


def default_positive_class(categories: Sequence[str]) -> str:
    """Positive-class convention when not configured: the lexicographically
    larger of the two category labels ('discharged' > 'deceased',
    'true' > 'false', 'pos' > 'neg')."""
    return max(categories)


def select_target(
    table: PatientTable,
    target_name: str,
    positive_class: str | None = None,
) -> tuple[PatientTable, np.ndarray]:
    """Split a table into (features, binary labels) for ``target_name``.

    Rows with a MISSING target are dropped (count logged). The target marker
    never appears among the features; task-specific companions (see
    ``COMPANION_EXCLUSIONS``) are removed alongside it.
    """
    if target_name not in table.schema:
        raise KeyError(f"unknown marker {target_name!r}")
    spec = table.schema[target_name]
    if spec.kind != CATEGORICAL:
        raise TableError(f"target {target_name!r} is not categorical (non-binary target)")
    cats = tuple(spec.categories or ())
    from .preprocess import MISSING_CATEGORY  # local import to avoid cycle

    effective = tuple(c for c in cats if c != MISSING_CATEGORY)
    if len(effective) != 2:
        raise TableError(
            f"target {target_name!r} must have exactly two categories, has {len(effective)}"
        )
    if positive_class is None:
        positive_class = default_positive_class(effective)
    elif positive_class not in effective:
        raise TableError(
            f"positive class {positive_class!r} not a category of {target_name!r}"
        )

    values = table.categorical_values(target_name)
    present = np.array([v is not None for v in values], dtype=bool)
    dropped = int((~present).sum())
    if dropped:
        logger.info("dropping %d rows with MISSING target %r", dropped, target_name)
    kept = np.nonzero(present)[0]
    labels = np.array(
        [1 if values[i] == positive_class else 0 for i in kept], dtype=np.int8
    )

    removed = {target_name, *COMPANION_EXCLUSIONS.get(target_name, ())}
    removed &= set(table.schema.names)
    features = table.take_rows(kept).drop_markers(removed)
    return features, labels
