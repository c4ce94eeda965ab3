"""L2-regularized logistic regression trained by damped Newton steps.

Numeric columns are standardized internally on training statistics; the
intercept is never penalized, so in the strong-regularization limit the
prediction collapses to the training base rate. Optimization stops when the
gradient norm falls to 1e-6 or after 500 iterations, in which case the best
iterate is returned and flagged unconverged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..preprocess import KIND_NUMERIC, DesignMatrix
from .gbdt import sigmoid
from .params import HyperParams

GRAD_TOL = 1e-6
MAX_ITER = 500


@dataclass(frozen=True)
class LogisticFit:
    weights: np.ndarray
    bias: float
    means: np.ndarray
    stds: np.ndarray
    converged: bool
    n_iter: int

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": self.bias,
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LogisticFit":
        return LogisticFit(
            np.asarray(doc["weights"], dtype=float),
            float(doc["bias"]),
            np.asarray(doc["means"], dtype=float),
            np.asarray(doc["stds"], dtype=float),
            bool(doc["converged"]),
            int(doc["n_iter"]),
        )


def standardizer(matrix: DesignMatrix, rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (mean, std) over training rows; indicator columns pass
    through untouched (mean 0, std 1), as do constant columns."""
    X = matrix.values if rows is None else matrix.values[rows]
    means = np.zeros(matrix.n_cols)
    stds = np.ones(matrix.n_cols)
    for j, col in enumerate(matrix.columns):
        if col.kind != KIND_NUMERIC:
            continue
        mu = float(X[:, j].mean())
        sd = float(X[:, j].std())
        means[j] = mu
        stds[j] = sd if sd > 0 else 1.0
    return means, stds


def loss_value(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: float, l2_lambda: float
) -> float:
    """Sum of logistic losses plus (lambda/2)||w||^2; the bias is unpenalized."""
    z = X @ weights + bias
    ll = np.logaddexp(0.0, z) - y * z
    return float(ll.sum() + 0.5 * l2_lambda * float(weights @ weights))


def loss_gradient(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: float, l2_lambda: float
) -> np.ndarray:
    """Gradient wrt [weights..., bias]."""
    r = sigmoid(X @ weights + bias) - y
    return np.concatenate([X.T @ r + l2_lambda * weights, [float(r.sum())]])


def fit_logistic(
    matrix: DesignMatrix, y: np.ndarray, hp: HyperParams
) -> LogisticFit:
    means, stds = standardizer(matrix)
    X = (matrix.values - means) / stds
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    lam = hp.l2_lambda

    theta = np.zeros(d + 1)
    best_theta = theta.copy()
    best_loss = loss_value(X, y, theta[:d], theta[d], lam)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        w, b = theta[:d], theta[d]
        grad = loss_gradient(X, y, w, b, lam)
        if float(np.linalg.norm(grad)) <= GRAD_TOL:
            converged = True
            break
        p = sigmoid(X @ w + b)
        dh = p * (1.0 - p)
        H = np.empty((d + 1, d + 1))
        Xd = X * dh[:, None]
        H[:d, :d] = X.T @ Xd + lam * np.eye(d)
        H[:d, d] = Xd.sum(axis=0)
        H[d, :d] = H[:d, d]
        H[d, d] = float(dh.sum())
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + 1e-8 * np.eye(d + 1), grad)
        # damped step: halve until the objective stops increasing
        scale = 1.0
        cur = loss_value(X, y, w, b, lam)
        for _ in range(40):
            cand = theta - scale * step
            cand_loss = loss_value(X, y, cand[:d], cand[d], lam)
            if cand_loss <= cur:
                break
            scale *= 0.5
        theta = theta - scale * step
        new_loss = loss_value(X, y, theta[:d], theta[d], lam)
        if new_loss < best_loss:
            best_loss = new_loss
            best_theta = theta.copy()
    if not converged:
        theta = best_theta
        # re-check: the cap may still have landed on a stationary point
        grad = loss_gradient(X, y, theta[:d], theta[d], lam)
        converged = float(np.linalg.norm(grad)) <= GRAD_TOL
    return LogisticFit(theta[:d].copy(), float(theta[d]), means, stds, converged, it)


def logistic_predict(fit: LogisticFit, values: np.ndarray) -> np.ndarray:
    X = (values - fit.means) / fit.stds
    return sigmoid(X @ fit.weights + fit.bias)
