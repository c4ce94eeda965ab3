"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately naive (nested loops, exhaustive enumeration)
and shares no code with the library's fast paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


@dataclass
class OracleLeaf:
    weight: float
    rows: list


@dataclass
class OracleSplit:
    feature: int
    threshold: float
    default_left: bool
    gain: float
    left: object
    right: object


def _gain(gl, hl, gr, hr, lam, gamma):
    parent = (gl + gr) ** 2 / (hl + hr + lam)
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma


def oracle_best_split(X, rows, g, h, lam, gamma, mcw, sentinel=None, ambiguity_out=None):
    """Try every (column, midpoint) candidate by full re-partition.

    Candidates are visited lowest column first, then lowest threshold, and the
    best is replaced only on strictly greater gain, which reproduces the
    contract's tie-breaking.
    """
    scored = []  # (gain, feature, threshold, default_left, frozen left set)
    for j in range(X.shape[1]):
        present = [X[i, j] for i in rows if sentinel is None or X[i, j] != sentinel]
        missing_rows = [i for i in rows if sentinel is not None and X[i, j] == sentinel]
        if not present:
            continue
        distinct = sorted(set(present))
        candidates = []
        if missing_rows:
            # the sentinel is itself a value; the lowest candidate isolates it
            candidates.append(((sentinel + distinct[0]) / 2.0, "isolate"))
        candidates.extend(
            ((distinct[k] + distinct[k + 1]) / 2.0, "ordinary")
            for k in range(len(distinct) - 1)
        )
        for thr, kind in candidates:
            if kind == "isolate":
                left = list(missing_rows)
                right = [i for i in rows if X[i, j] != sentinel]
                default_left = True
            else:
                left_p = [
                    i
                    for i in rows
                    if (sentinel is None or X[i, j] != sentinel) and X[i, j] < thr
                ]
                right_p = [
                    i
                    for i in rows
                    if (sentinel is None or X[i, j] != sentinel) and X[i, j] >= thr
                ]
                hl = sum(h[i] for i in left_p)
                hr = sum(h[i] for i in right_p)
                default_left = hl >= hr
                left = left_p + (missing_rows if default_left else [])
                right = right_p + ([] if default_left else missing_rows)
            GL = sum(g[i] for i in left)
            HL = sum(h[i] for i in left)
            GR = sum(g[i] for i in right)
            HR = sum(h[i] for i in right)
            if HL < mcw or HR < mcw:
                continue
            gain = _gain(GL, HL, GR, HR, lam, gamma)
            scored.append((gain, j, thr, default_left, frozenset(left)))
    if not scored:
        return None
    best = max(scored, key=lambda c: c[0])
    if best[0] <= 0.0:
        return None
    if ambiguity_out is not None:
        # a draw is degenerate when a different partition ties the argmax;
        # no pair of implementations can agree on such nodes bit-for-bit
        for gain, _, _, _, left in scored:
            if left != best[4] and abs(gain - best[0]) <= 1e-7 * max(1.0, abs(best[0])):
                ambiguity_out.append(True)
                break
    return best[:4]


def oracle_grow(X, rows, g, h, lam, gamma, mcw, max_depth, depth=0, sentinel=None, ambiguity_out=None):
    """Depthwise recursion mirroring the contract: split while gain > 0."""
    cand = None
    if depth < max_depth:
        cand = oracle_best_split(X, rows, g, h, lam, gamma, mcw, sentinel, ambiguity_out)
    if cand is None:
        G = sum(g[i] for i in rows)
        H = sum(h[i] for i in rows)
        return OracleLeaf(-G / (H + lam), list(rows))
    gain, j, thr, default_left = cand
    if sentinel is not None:
        left = [
            i
            for i in rows
            if (X[i, j] == sentinel and default_left)
            or (X[i, j] != sentinel and X[i, j] < thr)
        ]
    else:
        left = [i for i in rows if X[i, j] < thr]
    right = [i for i in rows if i not in set(left)]
    return OracleSplit(
        j,
        thr,
        default_left,
        gain,
        oracle_grow(X, left, g, h, lam, gamma, mcw, max_depth, depth + 1, sentinel, ambiguity_out),
        oracle_grow(X, right, g, h, lam, gamma, mcw, max_depth, depth + 1, sentinel, ambiguity_out),
    )


def oracle_tree_predict(node, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        cur = node
        while isinstance(cur, OracleSplit):
            cur = cur.left if X[i, cur.feature] < cur.threshold else cur.right
        out[i] = cur.weight
    return out


def oracle_boost(X, y, lam, gamma, mcw, max_depth, n_rounds, learning_rate, ambiguity_out=None):
    """Full boosting reference with prior-log-odds base score."""
    n = X.shape[0]
    p0 = float(np.mean(y))
    base = math.log(p0 / (1.0 - p0))
    raw = np.full(n, base)
    trees = []
    for _ in range(n_rounds):
        p = sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        tree = oracle_grow(X, list(range(n)), g, h, lam, gamma, mcw, max_depth, sentinel=None, ambiguity_out=ambiguity_out)
        trees.append(tree)
        raw = raw + learning_rate * oracle_tree_predict(tree, X)
    return base, trees


def oracle_auc(y, scores):
    """O(n^2) Mann-Whitney with half credit for ties."""
    y = np.asarray(y)
    scores = np.asarray(scores, dtype=float)
    pos = np.nonzero(y == 1)[0]
    neg = np.nonzero(y == 0)[0]
    total = 0.0
    for i in pos:
        for j in neg:
            if scores[i] > scores[j]:
                total += 1.0
            elif scores[i] == scores[j]:
                total += 0.5
    return total / (len(pos) * len(neg))


def oracle_pearson(x, y):
    """Two-pass textbook formula."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((x[i] - mx) * (y[i] - my) for i in range(n))
    dx = math.sqrt(sum((x[i] - mx) ** 2 for i in range(n)))
    dy = math.sqrt(sum((y[i] - my) ** 2 for i in range(n)))
    return num / (dx * dy)


def oracle_gini_tree(X, y, rows, max_depth, sentinel=None, depth=0):
    """Exhaustive Gini-gain decision tree (full columns, no subsampling)."""

    def gini(idx):
        if not idx:
            return 0.0
        p = sum(y[i] for i in idx) / len(idx)
        return 2.0 * p * (1.0 - p)

    y_node = [y[i] for i in rows]
    if depth >= max_depth or len(rows) < 2 or len(set(y_node)) == 1:
        return ("leaf", sum(y_node) / len(y_node), len(rows))
    n = len(rows)
    parent = gini(rows)
    best = None
    for j in range(X.shape[1]):
        present = [X[i, j] for i in rows if sentinel is None or X[i, j] != sentinel]
        missing_rows = [i for i in rows if sentinel is not None and X[i, j] == sentinel]
        if not present:
            continue
        distinct = sorted(set(present))
        cands = []
        if missing_rows:
            cands.append(((sentinel + distinct[0]) / 2.0, True))
        cands.extend(
            ((distinct[k] + distinct[k + 1]) / 2.0, False)
            for k in range(len(distinct) - 1)
        )
        for thr, forced in cands:
            if forced:
                left = list(missing_rows)
                right = [i for i in rows if X[i, j] != sentinel]
                dl = True
            else:
                left_p = [i for i in rows if (sentinel is None or X[i, j] != sentinel) and X[i, j] < thr]
                right_p = [i for i in rows if (sentinel is None or X[i, j] != sentinel) and X[i, j] >= thr]
                dl = len(left_p) >= len(right_p)
                left = left_p + (missing_rows if dl else [])
                right = right_p + ([] if dl else missing_rows)
            if not left or not right:
                continue
            gain = parent - (len(left) * gini(left) + len(right) * gini(right)) / n
            if best is None or gain > best[0]:
                best = (gain, j, thr, dl, left, right)
    if best is None or best[0] <= 0.0:
        return ("leaf", sum(y_node) / len(y_node), len(rows))
    gain, j, thr, dl, left, right = best
    return (
        "split",
        j,
        thr,
        dl,
        gain,
        oracle_gini_tree(X, y, left, max_depth, sentinel, depth + 1),
        oracle_gini_tree(X, y, right, max_depth, sentinel, depth + 1),
    )
