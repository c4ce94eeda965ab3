"""Model-family hyperparameters and shared model exceptions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

FAMILY_GBDT = "gbdt"
FAMILY_FOREST = "random_forest"
FAMILY_LOGISTIC = "logistic"
FAMILIES = (FAMILY_GBDT, FAMILY_FOREST, FAMILY_LOGISTIC)

GROWTH_DEPTHWISE = "depthwise"
GROWTH_LEAFWISE = "leafwise"


class ModelError(Exception):
    """Base for model-layer failures."""


class TrainingError(ModelError):
    """Training could not proceed (degenerate input, non-finite values)."""


class ModelDocumentError(ModelError):
    """Unreadable, corrupted, or version-mismatched model document."""


@dataclass(frozen=True)
class HyperParams:
    """One bag of knobs across families; families read the fields they use.

    ``num_leaves`` left unset resolves to 2**max_depth, which never binds for
    depth-bounded growth.
    """

    family: str = FAMILY_GBDT
    learning_rate: float = 0.1
    l2_lambda: float = 1.0
    min_split_gain: float = 0.0
    max_depth: int = 6
    num_leaves: int | None = None
    n_estimators: int = 100
    min_child_weight: float = 0.0
    subsample: float = 1.0
    growth: str = GROWTH_DEPTHWISE
    seed: int = 0
    # forest-only switches
    bootstrap: bool = True
    max_features: int | None = None  # None -> ceil(sqrt(d))

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.min_split_gain < 0:
            raise ValueError("min_split_gain must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_leaves is None:
            object.__setattr__(self, "num_leaves", 1 << min(self.max_depth, 20))
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError("subsample must lie in (0, 1]")
        if self.growth not in (GROWTH_DEPTHWISE, GROWTH_LEAFWISE):
            raise ValueError(f"unknown growth mode {self.growth!r}")

    def with_seed(self, seed: int) -> "HyperParams":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "learning_rate": self.learning_rate,
            "l2_lambda": self.l2_lambda,
            "min_split_gain": self.min_split_gain,
            "max_depth": self.max_depth,
            "num_leaves": self.num_leaves,
            "n_estimators": self.n_estimators,
            "min_child_weight": self.min_child_weight,
            "subsample": self.subsample,
            "growth": self.growth,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "max_features": self.max_features,
        }

    @staticmethod
    def from_dict(doc: dict) -> "HyperParams":
        return HyperParams(**doc)
