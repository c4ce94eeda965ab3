"""Random forest of Gini-split decision trees.

Each tree fits a bootstrap resample; each node considers a random column
subset of size ceil(sqrt(d)). Leaves store the class-1 probability of their
training rows and the forest predicts the mean leaf probability. Sentinel
(imputed-missing) values follow a default direction: the side with more
training rows, ties to the left. Deterministic for a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import HyperParams


@dataclass
class ForestLeaf:
    probability: float
    n_rows: int

    def to_dict(self) -> dict:
        return {"leaf": self.probability, "n": self.n_rows}


@dataclass
class ForestSplit:
    feature: int
    threshold: float
    default_left: bool
    gain: float
    n_rows: int
    left: "ForestSplit | ForestLeaf"
    right: "ForestSplit | ForestLeaf"

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "default_left": self.default_left,
            "gain": self.gain,
            "n": self.n_rows,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }


def forest_node_from_dict(doc: dict) -> "ForestSplit | ForestLeaf":
    if "leaf" in doc:
        return ForestLeaf(doc["leaf"], doc["n"])
    return ForestSplit(
        feature=doc["feature"],
        threshold=doc["threshold"],
        default_left=doc["default_left"],
        gain=doc["gain"],
        n_rows=doc["n"],
        left=forest_node_from_dict(doc["left"]),
        right=forest_node_from_dict(doc["right"]),
    )


def _gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = float(np.mean(y))
    return 2.0 * p * (1.0 - p)


@dataclass(frozen=True)
class _Best:
    gain: float
    feature: int
    threshold: float
    default_left: bool


def best_gini_split(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    features: np.ndarray,
    sentinel: float | None,
) -> Optional[_Best]:
    """Exhaustive (column, midpoint) search over ``features`` maximizing the
    weighted Gini impurity decrease; ties break to the lowest column index
    then lowest threshold."""
    y_node = y[rows]
    n = len(rows)
    parent = _gini(y_node)
    best: Optional[_Best] = None
    for j in features:
        x = X[rows, j]
        if sentinel is not None:
            miss = x == sentinel
        else:
            miss = np.zeros(len(x), dtype=bool)
        xp = x[~miss]
        yp = y_node[~miss]
        y_miss = y_node[miss]
        n_miss = len(y_miss)
        if len(xp) < 1:
            continue
        order = np.argsort(xp, kind="stable")
        xs = xp[order]
        ys = yp[order]
        cut = np.nonzero(np.diff(xs))[0]
        pos_cum = np.cumsum(ys)[cut]
        n_left = cut + 1
        n_right_p = len(xp) - n_left
        pos_total = float(ys.sum())
        pos_miss = float(y_miss.sum())
        # missing rows join the side with more present rows (ties -> left)
        default_left = n_left >= n_right_p
        nl = n_left + np.where(default_left, n_miss, 0)
        nr = n_right_p + np.where(default_left, 0, n_miss)
        pl = (pos_cum + np.where(default_left, pos_miss, 0.0)) / nl
        pr = (pos_total - pos_cum + np.where(default_left, 0.0, pos_miss)) / nr
        thresholds = (xs[cut] + xs[cut + 1]) / 2.0
        if n_miss:
            # the sentinel is a distinct value: lowest candidate isolates
            # missing rows from all present ones
            sep = (sentinel + float(xs[0])) / 2.0  # type: ignore[operator]
            thresholds = np.concatenate([[sep], thresholds])
            nl = np.concatenate([[n_miss], nl])
            nr = np.concatenate([[len(xp)], nr])
            pl = np.concatenate([[pos_miss / n_miss], pl])
            pr = np.concatenate([[pos_total / len(xp)], pr])
            default_left = np.concatenate([[True], default_left])
        if len(thresholds) == 0:
            continue
        gini_l = 2.0 * pl * (1.0 - pl)
        gini_r = 2.0 * pr * (1.0 - pr)
        gains = parent - (nl * gini_l + nr * gini_r) / n
        k = int(np.argmax(gains))
        if best is None or gains[k] > best.gain:
            best = _Best(float(gains[k]), int(j), float(thresholds[k]), bool(default_left[k]))
    if best is None or best.gain <= 0.0:
        return None
    return best


def grow_gini_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    hp: HyperParams,
    rng: np.random.Generator | None,
    sentinel: float | None,
) -> "ForestSplit | ForestLeaf":
    """Depth-first recursive growth; the rng draws one column subset per node."""
    d = X.shape[1]
    m = hp.max_features if hp.max_features is not None else _sqrt_features(d)

    def build(node_rows: np.ndarray, depth: int) -> "ForestSplit | ForestLeaf":
        y_node = y[node_rows]
        if depth >= hp.max_depth or len(node_rows) < 2 or _gini(y_node) == 0.0:
            return ForestLeaf(float(np.mean(y_node)), len(node_rows))
        if rng is not None and m < d:
            features = np.sort(rng.choice(d, size=m, replace=False))
        else:
            features = np.arange(d)
        cand = best_gini_split(X, y, node_rows, features, sentinel)
        if cand is None:
            return ForestLeaf(float(np.mean(y_node)), len(node_rows))
        x = X[node_rows, cand.feature]
        left = x < cand.threshold
        if sentinel is not None:
            miss = x == sentinel
            left = np.where(miss, cand.default_left, left).astype(bool)
        return ForestSplit(
            cand.feature,
            cand.threshold,
            cand.default_left,
            cand.gain,
            len(node_rows),
            build(node_rows[left], depth + 1),
            build(node_rows[~left], depth + 1),
        )

    return build(rows, 0)


def gini_tree_predict(
    node: "ForestSplit | ForestLeaf", X: np.ndarray, sentinel: float | None
) -> np.ndarray:
    out = np.empty(X.shape[0])
    stack: list[tuple["ForestSplit | ForestLeaf", np.ndarray]] = [
        (node, np.arange(X.shape[0]))
    ]
    while stack:
        cur, rows = stack.pop()
        if isinstance(cur, ForestLeaf):
            out[rows] = cur.probability
            continue
        x = X[rows, cur.feature]
        left = x < cur.threshold
        if sentinel is not None:
            miss = x == sentinel
            left = np.where(miss, cur.default_left, left).astype(bool)
        stack.append((cur.left, rows[left]))
        stack.append((cur.right, rows[~left]))
    return out


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
) -> list["ForestSplit | ForestLeaf"]:
    n = X.shape[0]
    trees = []
    for t in range(hp.n_estimators):
        rng = np.random.default_rng([hp.seed, t])
        if hp.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
        else:
            rows = np.arange(n)
        trees.append(grow_gini_tree(X, y, rows, hp, rng, sentinel))
    return trees


def _sqrt_features(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))
