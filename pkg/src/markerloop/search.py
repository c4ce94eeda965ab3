"""Grid search over the published hyperparameter spaces, scored by Monte
Carlo cross-validation with averaged validation metrics.

Continuous published ranges come without step sizes; the discretizations here
are finite grids that contain every published optimum, so the shipped presets
are reachable by search. The named presets are the best configurations as
published, one per (family preset, task).
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product

from .metrics import MetricsReport
from .models import (
    FAMILY_FOREST,
    FAMILY_GBDT,
    FAMILY_LOGISTIC,
    GROWTH_DEPTHWISE,
    GROWTH_LEAFWISE,
    HyperParams,
)
from .pipeline import PreparedData, ProtocolResult, run_protocol

logger = logging.getLogger(__name__)

TASK_SURVIVAL = "survival"
TASK_AKI = "aki"

PRESET_LGBM = "lgbm-like"
PRESET_XGB = "xgb-like"
PRESET_CAT = "cat-like"
PRESET_RF = "rf"
PRESET_LOGISTIC = "logistic"
PRESET_NAMES = (PRESET_LGBM, PRESET_XGB, PRESET_CAT, PRESET_RF, PRESET_LOGISTIC)


class GridBudgetError(ValueError):
    """Grid larger than the configured evaluation budget."""


class SearchError(RuntimeError):
    """Every grid point failed to train."""


# Published best configurations. The leaf-bounded preset's estimator count is
# not published; 100 (the common library default) is used.
_PRESETS: dict[tuple[str, str], HyperParams] = {
    (PRESET_LGBM, TASK_SURVIVAL): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.2, num_leaves=16, max_depth=12,
        l2_lambda=4.0, n_estimators=100, growth=GROWTH_LEAFWISE,
    ),
    (PRESET_LGBM, TASK_AKI): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.09, num_leaves=40, max_depth=11,
        l2_lambda=13.0, n_estimators=100, growth=GROWTH_LEAFWISE,
    ),
    (PRESET_XGB, TASK_SURVIVAL): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.01, max_depth=9, min_child_weight=1.0,
        min_split_gain=0.0, n_estimators=500, growth=GROWTH_DEPTHWISE,
    ),
    (PRESET_XGB, TASK_AKI): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.09, max_depth=4, min_child_weight=16.0,
        min_split_gain=0.0, n_estimators=1500, growth=GROWTH_DEPTHWISE,
    ),
    (PRESET_CAT, TASK_SURVIVAL): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.01, max_depth=7, l2_lambda=3.0,
        n_estimators=500, growth=GROWTH_DEPTHWISE,
    ),
    (PRESET_CAT, TASK_AKI): HyperParams(
        family=FAMILY_GBDT, learning_rate=0.01, max_depth=10, l2_lambda=3.0,
        n_estimators=500, growth=GROWTH_DEPTHWISE,
    ),
    (PRESET_RF, TASK_SURVIVAL): HyperParams(
        family=FAMILY_FOREST, n_estimators=1, max_depth=7,
    ),
    (PRESET_RF, TASK_AKI): HyperParams(
        family=FAMILY_FOREST, n_estimators=61, max_depth=10,
    ),
    (PRESET_LOGISTIC, TASK_SURVIVAL): HyperParams(family=FAMILY_LOGISTIC, l2_lambda=1.0),
    (PRESET_LOGISTIC, TASK_AKI): HyperParams(family=FAMILY_LOGISTIC, l2_lambda=1.0),
}


def preset(name: str, task: str = TASK_SURVIVAL) -> HyperParams:
    """Published best configuration for a family preset and task."""
    try:
        return _PRESETS[(name, task)]
    except KeyError:
        raise KeyError(f"no preset {name!r} for task {task!r}") from None


@dataclass(frozen=True)
class HyperGrid:
    """Finite named axes over one family preset; iteration order is the
    cartesian product in axis insertion order (first axis slowest)."""

    preset_name: str
    base: HyperParams
    axes: dict[str, tuple]

    def __post_init__(self) -> None:
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("grid axes must be non-empty")
        for hp in self.points():  # validates every point
            pass

    def __len__(self) -> int:
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def points(self):
        names = list(self.axes)
        for combo in product(*(self.axes[n] for n in names)):
            yield replace(self.base, **dict(zip(names, combo)))

    def subset(self, **axes) -> "HyperGrid":
        """Restrict or override axes (for budgeted runs)."""
        new_axes = dict(self.axes)
        for name, values in axes.items():
            new_axes[name] = tuple(values)
        return HyperGrid(self.preset_name, self.base, new_axes)


# learning-rate axes: 8 log-spaced points containing every published optimum
_LR_WIDE = (0.01, 0.02, 0.05, 0.09, 0.2, 0.4, 0.7, 1.0)
_LR_NARROW = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.09, 0.1)


def builtin_grid(name: str, task: str = TASK_SURVIVAL) -> HyperGrid:
    """The published search space for a family preset."""
    base = preset(name, task)
    if name == PRESET_LGBM:
        return HyperGrid(
            name,
            base,
            {
                "learning_rate": _LR_WIDE,
                "num_leaves": (10, 16, 25, 40, 60, 80, 100),
                "max_depth": tuple(range(3, 17)),
                "l2_lambda": tuple(float(v) for v in range(1, 16)),
            },
        )
    if name == PRESET_XGB:
        return HyperGrid(
            name,
            base,
            {
                "max_depth": tuple(range(3, 11)),
                "min_child_weight": (1.0, 6.0, 11.0, 16.0, 21.0, 26.0),
                "min_split_gain": (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0),
                "n_estimators": (50, 100, 250, 500, 1000, 1500, 2000),
                "learning_rate": _LR_NARROW,
            },
        )
    if name == PRESET_CAT:
        return HyperGrid(
            name,
            base,
            {
                "n_estimators": (50, 100, 250, 500, 1000),
                "learning_rate": _LR_NARROW,
                "max_depth": tuple(range(1, 11)),
            },
        )
    if name == PRESET_RF:
        return HyperGrid(
            name,
            base,
            {
                "n_estimators": (1, 21, 41, 61, 81),
                "max_depth": tuple(range(1, 11)),
            },
        )
    if name == PRESET_LOGISTIC:
        return HyperGrid(name, base, {"l2_lambda": (0.01, 0.1, 1.0, 10.0, 100.0)})
    raise KeyError(f"unknown family preset {name!r}")


@dataclass(frozen=True)
class LeaderboardRow:
    position: int  # grid iteration order
    hyperparams: HyperParams
    objective: float  # averaged validation objective
    per_split_val: tuple[MetricsReport, ...]
    averaged_val: MetricsReport
    averaged_test: MetricsReport


@dataclass(frozen=True)
class Leaderboard:
    objective_name: str
    rows: tuple[LeaderboardRow, ...]  # sorted descending, ties by grid order
    failures: tuple[tuple[int, str], ...] = ()

    @property
    def best(self) -> LeaderboardRow:
        return self.rows[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        axes = sorted({k for row in self.rows for k in row.hyperparams.to_dict()})
        writer.writerow(
            ["rank", "grid_position", f"val_{self.objective_name}", "test_accuracy", "test_auc"]
            + axes
        )
        for rank, row in enumerate(self.rows):
            hp = row.hyperparams.to_dict()
            writer.writerow(
                [
                    rank,
                    row.position,
                    repr(row.objective),
                    repr(row.averaged_test.accuracy),
                    "" if row.averaged_test.auc is None else repr(row.averaged_test.auc),
                ]
                + [hp.get(a, "") for a in axes]
            )
        return buf.getvalue()


def _objective_value(report: MetricsReport, objective: str) -> float:
    value = getattr(report, objective)
    if value is None:
        raise ValueError(f"objective {objective!r} unavailable")
    return float(value)


def grid_search(
    grid: HyperGrid,
    data: PreparedData,
    k: int = 5,
    base_seed: int = 0,
    objective: str = "accuracy",
    max_points: int = 512,
    n_jobs: int = 1,
    **protocol_kwargs,
) -> tuple[HyperParams, Leaderboard]:
    """Evaluate every grid point with the k-split protocol and return the
    argmax of the averaged validation objective plus the full leaderboard.

    Deterministic: all points share the same data splits, per-point work is
    pure, and the leaderboard is assembled in grid order regardless of the
    number of worker threads.
    """
    n_points = len(grid)
    if n_points > max_points:
        raise GridBudgetError(
            f"grid has {n_points} points, above the budget of {max_points}; "
            "subset the axes or raise max_points for a full-factorial run"
        )
    if n_points != 1:
        logger.info("grid search over %d points, k=%d", n_points, k)

    points = list(grid.points())

    def evaluate(item: tuple[int, HyperParams]):
        position, hp = item
        try:
            result = run_protocol(data, hp, k=k, base_seed=base_seed, **protocol_kwargs)
        except Exception as exc:  # noqa: BLE001 - per-point failures are data
            return position, None, f"{type(exc).__name__}: {exc}"
        return position, result, None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            raw = list(pool.map(evaluate, enumerate(points)))
    else:
        raw = [evaluate(item) for item in enumerate(points)]

    rows: list[LeaderboardRow] = []
    failures: list[tuple[int, str]] = []
    for position, result, error in raw:  # already in grid order
        if error is not None:
            failures.append((position, error))
            continue
        assert isinstance(result, ProtocolResult)
        rows.append(
            LeaderboardRow(
                position=position,
                hyperparams=points[position],
                objective=_objective_value(result.averaged_val, objective),
                per_split_val=tuple(o.val_report for o in result.outcomes),
                averaged_val=result.averaged_val,
                averaged_test=result.averaged_test,
            )
        )
    if not rows:
        raise SearchError(
            "every grid point failed: " + "; ".join(f"#{p}: {m}" for p, m in failures)
        )
    ordered = tuple(sorted(rows, key=lambda r: (-r.objective, r.position)))
    board = Leaderboard(objective, ordered, tuple(failures))
    return board.best.hyperparams, board


def evaluate_preset(
    hp: HyperParams,
    data: PreparedData,
    k: int = 5,
    base_seed: int = 0,
    **protocol_kwargs,
) -> ProtocolResult:
    """The k-split protocol for one configuration."""
    return run_protocol(data, hp, k=k, base_seed=base_seed, **protocol_kwargs)
