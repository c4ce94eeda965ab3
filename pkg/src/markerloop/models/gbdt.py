"""Second-order gradient-boosted trees for binary targets.

One engine covers the depth-bounded and leaf-bounded boosting configurations:
logistic loss, per-round gradients g = p - y and Hessians h = p(1 - p),
exact greedy splits maximizing

    gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda)
                 - (G_L+G_R)^2/(H_L+H_R+lambda) ] - gamma

with leaf weights w = -G/(H+lambda). A split is taken only if its gain is
strictly positive and both children carry at least ``min_child_weight``
Hessian mass. Threshold candidates are midpoints between consecutive distinct
sorted values; ties in gain break to the lowest column index, then the lowest
threshold. Rows at the numeric missing sentinel follow a learned default
direction: the side with the larger Hessian mass, ties to the left.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

from .params import HyperParams


@dataclass
class Leaf:
    weight: float
    grad_sum: float
    hess_sum: float
    n_rows: int

    def to_dict(self) -> dict:
        return {
            "leaf": self.weight,
            "g": self.grad_sum,
            "h": self.hess_sum,
            "n": self.n_rows,
        }


@dataclass
class SplitNode:
    feature: int
    threshold: float
    default_left: bool
    gain: float
    n_rows: int
    left: "SplitNode | Leaf"
    right: "SplitNode | Leaf"

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


def node_from_dict(doc: dict) -> "SplitNode | Leaf":
    if "leaf" in doc:
        return Leaf(doc["leaf"], doc["g"], doc["h"], doc["n"])
    return SplitNode(
        feature=doc["feature"],
        threshold=doc["threshold"],
        default_left=doc["default_left"],
        gain=doc["gain"],
        n_rows=doc["n"],
        left=node_from_dict(doc["left"]),
        right=node_from_dict(doc["right"]),
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def leaf_weight(grad_sum: float, hess_sum: float, l2_lambda: float) -> float:
    """Closed-form Newton step for a leaf."""
    return -grad_sum / (hess_sum + l2_lambda)


def _score(g: float, h: float, lam: float) -> float:
    return g * g / (h + lam)


@dataclass(frozen=True)
class Candidate:
    """Best split found for one node's rows, before it is applied."""

    gain: float
    feature: int
    threshold: float
    default_left: bool


def _column_candidates(
    x: np.ndarray,
    g_node: np.ndarray,
    h_node: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
    parent: float,
) -> Optional[tuple[float, float, bool]]:
    """Best (gain, threshold, default_left) for one column, or None."""
    n_miss = 0
    if sentinel is not None:
        miss = x == sentinel
        n_miss = int(miss.sum())
    if n_miss:
        xp = x[~miss]
        gp = g_node[~miss]
        hp_ = h_node[~miss]
        g_miss = float(g_node[miss].sum())
        h_miss = float(h_node[miss].sum())
    else:
        xp, gp, hp_ = x, g_node, h_node
        g_miss = h_miss = 0.0
    if len(xp) < 1:
        return None
    order = np.argsort(xp, kind="stable")
    xs = xp[order]
    cut = np.nonzero(np.diff(xs))[0]
    g_present = float(gp.sum())
    h_present = float(hp_.sum())
    gl = np.cumsum(gp[order])[cut]
    hl = np.cumsum(hp_[order])[cut]
    gr = g_present - gl
    hr = h_present - hl
    # sentinel rows join the heavier side (ties -> left)
    default_left = hl >= hr
    GL = gl + np.where(default_left, g_miss, 0.0)
    HL = hl + np.where(default_left, h_miss, 0.0)
    GR = gr + np.where(default_left, 0.0, g_miss)
    HR = hr + np.where(default_left, 0.0, h_miss)
    thresholds = (xs[cut] + xs[cut + 1]) / 2.0
    if n_miss:
        # the sentinel is itself a distinct value: the lowest candidate
        # isolates missing rows from all present ones
        sep = (sentinel + float(xs[0])) / 2.0  # type: ignore[operator]
        thresholds = np.concatenate([[sep], thresholds])
        GL = np.concatenate([[g_miss], GL])
        HL = np.concatenate([[h_miss], HL])
        GR = np.concatenate([[g_present], GR])
        HR = np.concatenate([[h_present], HR])
        default_left = np.concatenate([[True], default_left])
    if len(thresholds) == 0:
        return None
    gains = 0.5 * (
        GL * GL / (HL + hp.l2_lambda) + GR * GR / (HR + hp.l2_lambda) - parent
    ) - hp.min_split_gain
    valid = (HL >= hp.min_child_weight) & (HR >= hp.min_child_weight)
    gains = np.where(valid, gains, -np.inf)
    k = int(np.argmax(gains))  # first max = lowest threshold
    if not np.isfinite(gains[k]):
        return None
    return float(gains[k]), float(thresholds[k]), bool(default_left[k])


@njit(cache=True)
def _scan_sorted_columns(
    sub: np.ndarray,  # (n, d) node values
    order: np.ndarray,  # (n, d) per-column sort order of sub
    g_node: np.ndarray,
    h_node: np.ndarray,
    use_sentinel: bool,
    sentinel: float,
    lam: float,
    gamma: float,
    mcw: float,
    parent: float,
    fallback: np.ndarray,  # (d,) out: column needs the python path
):  # pragma: no cover - exercised via best_split
    n, d = sub.shape
    best_gain = -np.inf
    best_j = -1
    best_thr = 0.0
    best_dl = False
    for j in range(d):
        # sentinel rows sort into a leading block when the sentinel is below
        # every present value; otherwise this column is handed back
        m = 0
        if use_sentinel:
            cnt = 0
            for i in range(n):
                if sub[i, j] == sentinel:
                    cnt += 1
            while m < n and sub[order[m, j], j] == sentinel:
                m += 1
            if m != cnt:
                fallback[j] = True
                continue
        gm = 0.0
        hm = 0.0
        for i in range(m):
            r = order[i, j]
            gm += g_node[r]
            hm += h_node[r]
        gp = 0.0
        hp_ = 0.0
        for i in range(m, n):
            r = order[i, j]
            gp += g_node[r]
            hp_ += h_node[r]
        # candidate isolating exactly the sentinel group
        if 0 < m < n:
            if hm >= mcw and hp_ >= mcw:
                gain = 0.5 * (
                    gm * gm / (hm + lam) + gp * gp / (hp_ + lam) - parent
                ) - gamma
                if gain > best_gain:
                    best_gain = gain
                    best_j = j
                    best_thr = (sentinel + sub[order[m, j], j]) / 2.0
                    best_dl = True
        # ordinary cuts between consecutive distinct present values
        glp = 0.0
        hlp = 0.0
        for i in range(m, n - 1):
            r = order[i, j]
            glp += g_node[r]
            hlp += h_node[r]
            xi = sub[r, j]
            xn = sub[order[i + 1, j], j]
            if xn <= xi:
                continue
            grp = gp - glp
            hrp = hp_ - hlp
            dl = hlp >= hrp
            if dl:
                GL = glp + gm
                HL = hlp + hm
                GR = grp
                HR = hrp
            else:
                GL = glp
                HL = hlp
                GR = grp + gm
                HR = hrp + hm
            if HL < mcw or HR < mcw:
                continue
            gain = 0.5 * (
                GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
            ) - gamma
            if gain > best_gain:
                best_gain = gain
                best_j = j
                best_thr = (xi + xn) / 2.0
                best_dl = dl
    return best_gain, best_j, best_thr, best_dl


def best_split(
    X: np.ndarray,
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
) -> Optional[Candidate]:
    """Exact greedy search over all (column, midpoint threshold) candidates.

    Columns are scanned by a compiled kernel when the sentinel sorts strictly
    below every present value (its contract); columns violating that fall
    back to a per-column scan with identical semantics.
    """
    g_node = g[rows]
    h_node = h[rows]
    G = float(g_node.sum())
    H = float(h_node.sum())
    parent = _score(G, H, hp.l2_lambda)
    n = len(rows)
    d = X.shape[1]
    best: Optional[Candidate] = None
    if n < 2:
        return None

    if _HAVE_NUMBA:
        sub = np.ascontiguousarray(X[rows])
        order = np.argsort(sub, axis=0)
        fb = np.zeros(d, dtype=np.bool_)
        gain_v, j_v, thr_v, dl_v = _scan_sorted_columns(
            sub,
            order,
            g_node,
            h_node,
            sentinel is not None,
            np.nan if sentinel is None else float(sentinel),
            hp.l2_lambda,
            hp.min_split_gain,
            hp.min_child_weight,
            parent,
            fb,
        )
        if j_v >= 0 and np.isfinite(gain_v):
            best = Candidate(float(gain_v), int(j_v), float(thr_v), bool(dl_v))
        for j in np.nonzero(fb)[0]:
            cand = _column_candidates(X[rows, j], g_node, h_node, hp, sentinel, parent)
            if cand is not None and (
                best is None
                or cand[0] > best.gain
                or (cand[0] == best.gain and int(j) < best.feature)
            ):
                best = Candidate(cand[0], int(j), cand[1], cand[2])
    else:
        for j in range(d):
            cand = _column_candidates(X[rows, j], g_node, h_node, hp, sentinel, parent)
            if cand is not None and (best is None or cand[0] > best.gain):
                best = Candidate(cand[0], int(j), cand[1], cand[2])
    if best is None or best.gain <= 0.0:
        return None
    return best


def _route(
    X: np.ndarray,
    rows: np.ndarray,
    cand: Candidate,
    sentinel: float | None,
) -> tuple[np.ndarray, np.ndarray]:
    x = X[rows, cand.feature]
    left = x < cand.threshold
    if sentinel is not None:
        miss = x == sentinel
        left = np.where(miss, cand.default_left, left)
    return rows[left.astype(bool)], rows[~left.astype(bool)]


def _make_leaf(rows: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float) -> Leaf:
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    return Leaf(leaf_weight(G, H, lam), G, H, len(rows))


@dataclass
class _Pending:
    rows: np.ndarray
    depth: int
    candidate: Optional[Candidate]


def grow_tree(
    X: np.ndarray,
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
) -> "SplitNode | Leaf":
    """Grow one tree. ``depthwise`` expands nodes in breadth-first order;
    ``leafwise`` always splits the highest-gain frontier node next. Both
    honor max_depth and num_leaves."""
    lam = hp.l2_lambda
    if hp.growth == "depthwise":
        root_slot: list = [None]
        queue: list[tuple[np.ndarray, int, list, int]] = [(rows, 0, root_slot, 0)]
        n_leaves = 1
        while queue:
            node_rows, depth, slot, pos = queue.pop(0)
            cand = None
            if depth < hp.max_depth and n_leaves < hp.num_leaves:
                cand = best_split(X, node_rows, g, h, hp, sentinel)
            if cand is None:
                slot[pos] = _make_leaf(node_rows, g, h, lam)
                continue
            left_rows, right_rows = _route(X, node_rows, cand, sentinel)
            node = SplitNode(
                cand.feature,
                cand.threshold,
                cand.default_left,
                cand.gain,
                len(node_rows),
                None,  # type: ignore[arg-type]
                None,  # type: ignore[arg-type]
            )
            slot[pos] = node
            n_leaves += 1
            child_slot = _NodeSlot(node)
            queue.append((left_rows, depth + 1, child_slot, 0))
            queue.append((right_rows, depth + 1, child_slot, 1))
        return root_slot[0]

    # leafwise: greedy frontier expansion by gain
    root_slot = [None]
    heap: list[tuple[float, int, _Pending, list, int]] = []
    counter = 0

    def push(node_rows: np.ndarray, depth: int, slot, pos) -> None:
        nonlocal counter
        cand = None
        if depth < hp.max_depth:
            cand = best_split(X, node_rows, g, h, hp, sentinel)
        if cand is None:
            slot[pos] = _make_leaf(node_rows, g, h, lam)
        else:
            heapq.heappush(
                heap, (-cand.gain, counter, _Pending(node_rows, depth, cand), slot, pos)
            )
            counter += 1

    push(rows, 0, root_slot, 0)
    n_leaves = 1
    while heap and n_leaves < hp.num_leaves:
        _, _, pending, slot, pos = heapq.heappop(heap)
        cand = pending.candidate
        assert cand is not None
        left_rows, right_rows = _route(X, pending.rows, cand, sentinel)
        node = SplitNode(
            cand.feature,
            cand.threshold,
            cand.default_left,
            cand.gain,
            len(pending.rows),
            None,  # type: ignore[arg-type]
            None,  # type: ignore[arg-type]
        )
        slot[pos] = node
        n_leaves += 1
        child_slot = _NodeSlot(node)
        push(left_rows, pending.depth + 1, child_slot, 0)
        push(right_rows, pending.depth + 1, child_slot, 1)
    # anything left on the heap becomes leaves
    while heap:
        _, _, pending, slot, pos = heapq.heappop(heap)
        slot[pos] = _make_leaf(pending.rows, g, h, lam)
    return root_slot[0]


class _NodeSlot:
    """Write-through child slots of a SplitNode (0 = left, 1 = right)."""

    def __init__(self, node: SplitNode):
        self._node = node

    def __setitem__(self, pos: int, value) -> None:
        if pos == 0:
            self._node.left = value
        else:
            self._node.right = value


def tree_predict(
    node: "SplitNode | Leaf", X: np.ndarray, sentinel: float | None
) -> np.ndarray:
    out = np.empty(X.shape[0])
    stack: list[tuple["SplitNode | Leaf", np.ndarray]] = [
        (node, np.arange(X.shape[0]))
    ]
    while stack:
        cur, rows = stack.pop()
        if isinstance(cur, Leaf):
            out[rows] = cur.weight
            continue
        x = X[rows, cur.feature]
        left = x < cur.threshold
        if sentinel is not None:
            miss = x == sentinel
            left = np.where(miss, cur.default_left, left).astype(bool)
        stack.append((cur.left, rows[left]))
        stack.append((cur.right, rows[~left]))
    return out


def tree_leaves(node: "SplitNode | Leaf") -> list[Leaf]:
    if isinstance(node, Leaf):
        return [node]
    return tree_leaves(node.left) + tree_leaves(node.right)


def tree_depth(node: "SplitNode | Leaf") -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def fit_boosted_trees(
    X: np.ndarray,
    y: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
    base_score: float,
) -> list["SplitNode | Leaf"]:
    """Boosting loop over ``hp.n_estimators`` rounds."""
    n = X.shape[0]
    raw = np.full(n, base_score)
    trees: list["SplitNode | Leaf"] = []
    rng = np.random.default_rng(hp.seed) if hp.subsample < 1.0 else None
    all_rows = np.arange(n)
    for _ in range(hp.n_estimators):
        p = sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        if rng is not None:
            m = max(1, int(math.floor(hp.subsample * n)))
            rows = np.sort(rng.choice(n, size=m, replace=False))
        else:
            rows = all_rows
        tree = grow_tree(X, rows, g, h, hp, sentinel)
        trees.append(tree)
        raw = raw + hp.learning_rate * tree_predict(tree, X, sentinel)
    return trees


def prior_log_odds(y: np.ndarray) -> float:
    p = float(np.mean(y))
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class GbdtAudit:
    """Post-hoc consistency check of a fitted ensemble against its own data."""

    n_leaves: int
    n_splits: int
    max_leaf_weight_error: float
    min_split_gain: float
    min_child_hessian: float


def audit_boosted_trees(
    trees: list["SplitNode | Leaf"],
    X: np.ndarray,
    y: np.ndarray,
    hp: HyperParams,
    sentinel: float | None,
    base_score: float,
) -> GbdtAudit:
    """Replay the boosting rounds and recompute every leaf weight -G/(H+lambda)
    and every split's gain from the rows actually routed there.

    Only exact on models trained without row subsampling (the audit replays
    on the full training set).
    """
    n = X.shape[0]
    raw = np.full(n, base_score)
    max_err = 0.0
    min_gain = math.inf
    min_child_h = math.inf
    n_leaves = 0
    n_splits = 0
    lam = hp.l2_lambda
    for tree in trees:
        p = sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        stack: list[tuple["SplitNode | Leaf", np.ndarray]] = [(tree, np.arange(n))]
        while stack:
            node, rows = stack.pop()
            if isinstance(node, Leaf):
                G = float(g[rows].sum())
                H = float(h[rows].sum())
                max_err = max(max_err, abs(leaf_weight(G, H, lam) - node.weight))
                n_leaves += 1
                continue
            n_splits += 1
            x = X[rows, node.feature]
            left = x < node.threshold
            if sentinel is not None:
                miss = x == sentinel
                left = np.where(miss, node.default_left, left).astype(bool)
            lrows, rrows = rows[left], rows[~left]
            GL, HL = float(g[lrows].sum()), float(h[lrows].sum())
            GR, HR = float(g[rrows].sum()), float(h[rrows].sum())
            gain = (
                0.5
                * (
                    _score(GL, HL, lam)
                    + _score(GR, HR, lam)
                    - _score(GL + GR, HL + HR, lam)
                )
                - hp.min_split_gain
            )
            min_gain = min(min_gain, gain)
            min_child_h = min(min_child_h, HL, HR)
            stack.append((node.left, lrows))
            stack.append((node.right, rrows))
        raw = raw + hp.learning_rate * tree_predict(tree, X, sentinel)
    return GbdtAudit(n_leaves, n_splits, max_err, min_gain, min_child_h)
