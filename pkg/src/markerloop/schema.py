"""Marker catalogue: which clinical/biochemical variables exist, their kinds,
valid ranges or category sets, and their role in an experiment.

The schema is the contract everything downstream (ingestion, encoding, model
column layout) is derived from, so marker order is significant and stable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

NUMERIC = "numeric"
CATEGORICAL = "categorical"

ROLE_FEATURE = "feature"
ROLE_TARGET = "target"
ROLE_EXCLUDED = "clinician_excluded"

_KINDS = (NUMERIC, CATEGORICAL)
_ROLES = (ROLE_FEATURE, ROLE_TARGET, ROLE_EXCLUDED)


class SchemaError(ValueError):
    """Invalid marker definition or schema document."""


@dataclass(frozen=True)
class MarkerSpec:
    """One marker: a numeric lab value or a categorical status variable.

    ``source_header`` is the column header used in data files when it differs
    from the marker name (needed when a file carries duplicate headers that
    map onto distinct markers positionally).
    """

    name: str
    kind: str
    numeric_range: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None
    role: str = ROLE_FEATURE
    source_header: str | None = None

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise SchemaError("marker name must be a non-empty string")
        if self.kind not in _KINDS:
            raise SchemaError(f"unknown marker kind {self.kind!r} for {self.name!r}")
        if self.role not in _ROLES:
            raise SchemaError(f"unknown role {self.role!r} for {self.name!r}")
        if self.kind == NUMERIC:
            if self.numeric_range is None:
                raise SchemaError(f"numeric marker {self.name!r} needs a (min, max) range")
            lo, hi = self.numeric_range
            if not (float(lo) <= float(hi)):
                raise SchemaError(
                    f"numeric marker {self.name!r} has invalid range ({lo}, {hi})"
                )
            if self.categories is not None:
                raise SchemaError(f"numeric marker {self.name!r} cannot carry categories")
        else:
            if not self.categories:
                raise SchemaError(
                    f"categorical marker {self.name!r} needs a non-empty category set"
                )
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"duplicate categories on marker {self.name!r}")
            if self.numeric_range is not None:
                raise SchemaError(
                    f"categorical marker {self.name!r} cannot carry a numeric range"
                )

    @property
    def header(self) -> str:
        """Header name expected in data files."""
        return self.source_header if self.source_header is not None else self.name

    def to_dict(self) -> dict:
        doc: dict = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.kind == NUMERIC:
            lo, hi = self.numeric_range  # type: ignore[misc]
            doc["range"] = [float(lo), float(hi)]
        else:
            doc["categories"] = list(self.categories)  # type: ignore[arg-type]
        if self.source_header is not None:
            doc["source_header"] = self.source_header
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "MarkerSpec":
        try:
            name = doc["name"]
            kind = doc["kind"]
        except KeyError as exc:
            raise SchemaError(f"marker document missing field {exc}") from exc
        rng = doc.get("range")
        cats = doc.get("categories")
        return MarkerSpec(
            name=name,
            kind=kind,
            numeric_range=tuple(float(v) for v in rng) if rng is not None else None,
            categories=tuple(str(c) for c in cats) if cats is not None else None,
            role=doc.get("role", ROLE_FEATURE),
            source_header=doc.get("source_header"),
        )


@dataclass(frozen=True)
class MarkerSchema:
    """Ordered, named collection of markers.

    Ordering is deterministic and defines the column order of every design
    matrix built from this schema.
    """

    markers: tuple[MarkerSpec, ...]
    version: str = "1"
    note: str = ""
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        names = [m.name for m in self.markers]
        seen: set[str] = set()
        for n in names:
            if n in seen:
                raise SchemaError(f"duplicate marker name {n!r} in schema")
            seen.add(n)
        targets = [m.name for m in self.markers if m.role == ROLE_TARGET]
        if len(targets) > 1:
            raise SchemaError(f"schema declares more than one target: {targets}")
        object.__setattr__(self, "_by_name", {m.name: m for m in self.markers})

    def __iter__(self) -> Iterator[MarkerSpec]:
        return iter(self.markers)

    def __len__(self) -> int:
        return len(self.markers)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> MarkerSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown marker {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.markers)

    @property
    def target(self) -> MarkerSpec | None:
        for m in self.markers:
            if m.role == ROLE_TARGET:
                return m
        return None

    def feature_markers(self) -> tuple[MarkerSpec, ...]:
        return tuple(m for m in self.markers if m.role == ROLE_FEATURE)

    def with_target(self, target_name: str, excluded: Iterable[str] = ()) -> "MarkerSchema":
        """Schema copy with ``target_name`` as the single target and the given
        markers flagged clinician-excluded; everything else becomes a feature."""
        if target_name not in self._by_name:
            raise KeyError(f"unknown marker {target_name!r}")
        excluded = set(excluded)
        unknown = excluded - set(self.names)
        if unknown:
            raise KeyError(f"unknown markers in exclusion set: {sorted(unknown)}")
        if target_name in excluded:
            raise SchemaError(f"target {target_name!r} cannot also be excluded")
        new = []
        for m in self.markers:
            if m.name == target_name:
                new.append(replace(m, role=ROLE_TARGET))
            elif m.name in excluded:
                new.append(replace(m, role=ROLE_EXCLUDED))
            else:
                new.append(replace(m, role=ROLE_FEATURE))
        return MarkerSchema(tuple(new), version=self.version, note=self.note)

    def with_categories(self, name: str, categories: Iterable[str]) -> "MarkerSchema":
        """Schema copy with the category set of ``name`` replaced."""
        spec = self[name]
        if spec.kind != CATEGORICAL:
            raise SchemaError(f"marker {name!r} is not categorical")
        new = tuple(
            replace(m, categories=tuple(categories)) if m.name == name else m
            for m in self.markers
        )
        return MarkerSchema(new, version=self.version, note=self.note)

    def to_dict(self) -> dict:
        return {
            "format": "markerloop-schema",
            "version": self.version,
            "note": self.note,
            "markers": [m.to_dict() for m in self.markers],
        }

    @staticmethod
    def from_dict(doc: dict) -> "MarkerSchema":
        if "markers" not in doc:
            raise SchemaError("schema document has no 'markers' array")
        markers = tuple(MarkerSpec.from_dict(m) for m in doc["markers"])
        return MarkerSchema(
            markers,
            version=str(doc.get("version", "1")),
            note=str(doc.get("note", "")),
        )


def load_schema(path: str | Path) -> MarkerSchema:
    """Load a schema document (JSON) from disk."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read schema file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from exc
    return MarkerSchema.from_dict(doc)


def save_schema(schema: MarkerSchema, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(schema.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


_BOOL = ("false", "true")

# Numeric marker catalogue with native-unit dynamic ranges. The aspartate
# aminotransferase column appears twice in the source files with different
# maxima; both are kept as distinct markers mapped positionally onto the
# duplicate header.
_DEFAULT_NUMERIC: tuple[tuple[str, float, float], ...] = (
    ("Invasive ventilation days", 0, 40),
    ("Length of stay", 1, 96),
    ("Oral temperature", 34, 39.8),
    ("Oxygen saturation in arterial blood by pulse", 55, 100),
    ("Respiratory rate", 11.0, 95),
    ("Heart rate beat by EKG", 6, 245),
    ("Systolic blood pressure", 55, 222),
    ("Mean blood pressure by non invasive", 40, 168),
    ("Neutrophils in blood by automated count", 0.36, 100),
    ("Lymphocytes in blood by automated count", 0.36, 100),
    ("Sodium [moles/volume] in serum or plasma", 100, 169),
    ("AST (a)", 8, 2786),
    ("AST (b)", 8, 2909),
    ("Creatine kinase in serum or plasma", 11, 6139),
    ("Lactate in serum or plasma", 5, 23.8),
    ("Troponin T.cardiac in serum or plasma", 0.01, 1.81),
    ("Natriuretic peptide.B prohormone N-terminal in serum or plasma", 5, 267600),
    ("Procalcitonin in serum or plasma immunoassay", 0.02, 193.5),
    ("Fibrin D-dimer DDU in platelet poor plasma", 150, 63670),
    ("Ferritin [mass/volume] in serum or plasma", 5.3, 16291),
    ("Hemoglobin A1c in blood", 4.2, 17),
    ("BMI ratio", 11.95, 92.8),
    ("Potassium [moles/volume] in serum or plasma", 2, 7.7),
    ("Chloride [moles/volume] in serum or plasma", 60, 134),
    ("Bicarbonate [moles/volume] in serum", 6, 43),
    ("Glomerular filtration rate", 2, 120),
    ("Erythrocyte sedimentation rate", 5, 145),
    ("Cholesterol in LDL in serum or plasma", 12, 399),
    ("Cholesterol in VLDL [mass/volume] in serum", 8, 79),
    ("Triglyceride", 10, 3524),
    ("HDL", 10, 98),
)

_AST_HEADER = "Aspartate aminotransferase in serum or plasma"

# Category sets for markers whose values are not published anywhere; these are
# sensible defaults that ingestion extends with whatever the file contains.
_DEFAULT_CATEGORICAL: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("gender", ("female", "male")),
    ("last status", ("deceased", "discharged")),
    ("age", ("0-17", "18-39", "40-59", "60-79", "80+")),
    ("is ICU", _BOOL),
    ("was ventilated", _BOOL),
    ("AKI during hospitalization", _BOOL),
    ("type of therapeutic received", ("antiviral", "heparin", "none", "other", "steroid")),
    ("diarrhea", _BOOL),
    ("vomiting", _BOOL),
    ("nausea", _BOOL),
    ("cough", _BOOL),
    ("was antibiotic received", _BOOL),
    ("other lung diseases", _BOOL),
    ("urine protein", ("1+", "2+", "3+", "negative", "trace")),
    ("smoking status", ("current", "former", "never")),
    ("abdominal pain", _BOOL),
)


def default_schema() -> MarkerSchema:
    """Built-in marker catalogue for the curated cohort file layout."""
    markers: list[MarkerSpec] = []
    for name, lo, hi in _DEFAULT_NUMERIC:
        source = _AST_HEADER if name.startswith("AST (") else None
        markers.append(
            MarkerSpec(name=name, kind=NUMERIC, numeric_range=(lo, hi), source_header=source)
        )
    for name, cats in _DEFAULT_CATEGORICAL:
        markers.append(MarkerSpec(name=name, kind=CATEGORICAL, categories=cats))
    return MarkerSchema(
        tuple(markers),
        version="builtin-1",
        note=(
            "Built-in marker catalogue. AST (a)/(b) both map onto the duplicated "
            "'Aspartate aminotransferase in serum or plasma' file header, in order "
            "of appearance. Category sets are defaults and are extended from data "
            "at ingestion."
        ),
    )
