"""Seeded synthetic patient tables with planted signal.

Desk-scale stand-in for a real cohort: a configurable number of informative
markers drive the binary outcome through a logistic model, noise markers
carry nothing, and an optional leakage marker copies the label with a given
determinism. Used by tests, demos, and the verification suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import CATEGORICAL, NUMERIC, MarkerSchema, MarkerSpec
from .table import MISSING, PatientTable

TARGET_NAME = "outcome"
TARGET_CATEGORIES = ("neg", "pos")
LEAKAGE_CATEGORIES = ("neg", "pos")
NOISE_CATEGORIES = ("a", "b", "c")

# Spread of informative marker values. Effect sizes are per-unit log-odds
# shifts, so the achievable separation scales with this.
INFORMATIVE_SD = 5.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic table; the seed fully determines the output."""

    n_rows: int
    n_noise_numeric: int = 0
    n_noise_categorical: int = 0
    informative_markers: tuple[tuple[str, float], ...] = ()
    leakage_marker: tuple[str, float] | None = None  # (name, determinism)
    positive_rate: float = 0.5
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rows < 1:
            raise ValueError("n_rows must be positive")
        if not (0.0 < self.positive_rate < 1.0):
            raise ValueError("positive_rate must lie in (0, 1)")
        if not (0.0 <= self.missing_rate < 1.0):
            raise ValueError("missing_rate must lie in [0, 1)")
        names = [n for n, _ in self.informative_markers]
        if self.leakage_marker is not None:
            lname, det = self.leakage_marker
            if not (0.0 <= det <= 1.0):
                raise ValueError("leakage determinism must lie in [0, 1]")
            names.append(lname)
        if TARGET_NAME in names:
            raise ValueError(f"marker name collides with target {TARGET_NAME!r}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate marker names in spec")


def _build_schema(spec: SyntheticSpec) -> MarkerSchema:
    markers: list[MarkerSpec] = []
    for name, _ in spec.informative_markers:
        markers.append(MarkerSpec(name, NUMERIC, numeric_range=(-12.0 * INFORMATIVE_SD, 12.0 * INFORMATIVE_SD)))
    for i in range(spec.n_noise_numeric):
        markers.append(MarkerSpec(f"noise_n{i:02d}", NUMERIC, numeric_range=(-12.0, 12.0)))
    for i in range(spec.n_noise_categorical):
        markers.append(MarkerSpec(f"noise_c{i:02d}", CATEGORICAL, categories=NOISE_CATEGORIES))
    if spec.leakage_marker is not None:
        markers.append(
            MarkerSpec(spec.leakage_marker[0], CATEGORICAL, categories=LEAKAGE_CATEGORIES)
        )
    markers.append(MarkerSpec(TARGET_NAME, CATEGORICAL, categories=TARGET_CATEGORIES))
    schema = MarkerSchema(tuple(markers), version="synthetic-1", note="seeded synthetic table")
    return schema.with_target(TARGET_NAME)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _calibrate_intercept(eta: np.ndarray, positive_rate: float) -> float:
    """Bisect the intercept so the mean positive probability hits the target."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.mean(_sigmoid(mid + eta))) < positive_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(spec: SyntheticSpec) -> PatientTable:
    """Materialize the table described by ``spec``.

    Each informative marker value shifts the positive-class log-odds by
    (effect size x value); the intercept is calibrated on the sample so the
    mean positive probability equals ``positive_rate``. The leakage marker
    copies the outcome with probability equal to its determinism. MISSING
    cells are injected uniformly over feature cells only.
    """
    schema = _build_schema(spec)
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows

    columns: dict[str, list] = {}
    eta = np.zeros(n)
    for name, effect in spec.informative_markers:
        x = rng.normal(0.0, INFORMATIVE_SD, size=n)
        eta += effect * x
        columns[name] = list(x)
    for i in range(spec.n_noise_numeric):
        columns[f"noise_n{i:02d}"] = list(rng.normal(0.0, 1.0, size=n))
    for i in range(spec.n_noise_categorical):
        columns[f"noise_c{i:02d}"] = list(rng.choice(NOISE_CATEGORIES, size=n))

    intercept = _calibrate_intercept(eta, spec.positive_rate)
    p = _sigmoid(intercept + eta)
    y = (rng.random(n) < p).astype(np.int8)

    if spec.leakage_marker is not None:
        lname, determinism = spec.leakage_marker
        copy = rng.random(n) < determinism
        values = np.where(copy, y, 1 - y)
        columns[lname] = [LEAKAGE_CATEGORIES[v] for v in values]

    columns[TARGET_NAME] = [TARGET_CATEGORIES[v] for v in y]

    if spec.missing_rate > 0.0:
        for m in schema:
            if m.name == TARGET_NAME:
                continue
            mask = rng.random(n) < spec.missing_rate
            col = columns[m.name]
            columns[m.name] = [MISSING if mask[i] else col[i] for i in range(n)]

    return PatientTable.from_columns(schema, columns)
