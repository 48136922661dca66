"""Dual coordinate descent for L2-regularized squared-hinge linear SVMs.

Solves, independently for every column ``l`` of ``Y``::

    min_w  0.5 * ||w||^2 + C * sum_i max(0, 1 - Y[i, l] * w . x_i)^2

through its dual ``min_{a >= 0} 0.5 a'(Q + D I)a - sum(a)`` with
``Q_ij = y_i y_j x_i . x_j`` and ``D = 1 / (2C)``. All columns share the
same instance permutation per epoch, so a column's solution does not depend
on which other columns are solved alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class SolverInfo:
    epochs: np.ndarray  # epochs run per column
    converged: np.ndarray
    dual_history: list = field(default_factory=list)  # per epoch, dual objective per column
    alpha: np.ndarray | None = None


def dual_objective(W: np.ndarray, alpha: np.ndarray, C: float) -> np.ndarray:
    D = 0.5 / C
    return 0.5 * np.einsum("dl,dl->l", W, W) + 0.5 * D * np.einsum("nl,nl->l", alpha, alpha) - alpha.sum(axis=0)


def primal_objective(X, Y: np.ndarray, W: np.ndarray, C: float) -> np.ndarray:
    margins = np.asarray(X @ W)
    loss = np.maximum(0.0, 1.0 - Y * margins) ** 2
    return 0.5 * np.einsum("dl,dl->l", W, W) + C * loss.sum(axis=0)


def solve(X, Y, C: float = 1.0, tol: float = 1e-2, max_iter: int = 200, seed: int = 0,
          keep_alpha: bool = False) -> tuple[np.ndarray, SolverInfo]:
    """Run dual coordinate descent.

    Args:
        X: (n, d) feature matrix, dense or sparse.
        Y: (n,) or (n, L) array of +1/-1 targets.
        C: loss weight, > 0.
        tol: stop a column once its largest projected-gradient violation
            over an epoch falls below this value.
        max_iter: epoch cap.
        seed: seeds the per-epoch instance permutation.

    Returns:
        ``(W, info)`` with ``W`` of shape (d, L), or (d,) for 1-D ``Y``.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    Y = np.asarray(Y, dtype=np.float64)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    X = sp.csr_matrix(X, dtype=np.float64)
    n, d = X.shape
    if Y.shape[0] != n:
        raise ValueError("X and Y disagree on the number of instances")
    L = Y.shape[1]
    D = 0.5 / C
    q_diag = np.asarray(X.multiply(X).sum(axis=1)).ravel() + D

    W = np.zeros((d, L))
    alpha = np.zeros((n, L))
    active = np.ones(L, dtype=bool)
    epochs = np.zeros(L, dtype=np.int64)
    rng = np.random.default_rng(seed)
    indptr, indices, data = X.indptr, X.indices, X.data
    history = []

    for _ in range(max_iter):
        if not active.any():
            break
        viol = np.zeros(L)
        act = active.astype(np.float64)
        for i in rng.permutation(n):
            lo, hi = indptr[i], indptr[i + 1]
            idx = indices[lo:hi]
            xv = data[lo:hi]
            yi = Y[i]
            ai = alpha[i]
            G = yi * (xv @ W[idx]) - 1.0 + D * ai
            PG = np.where(ai > 0.0, G, np.minimum(G, 0.0))
            np.maximum(viol, np.abs(PG), out=viol)
            new = np.maximum(ai - G / q_diag[i], 0.0)
            step = (new - ai) * act
            if not step.any():
                continue
            alpha[i] = ai + step
            if idx.size:
                W[idx] += np.outer(xv, step * yi)
        epochs += active
        history.append(dual_objective(W, alpha, C))
        active &= viol >= tol

    info = SolverInfo(epochs=epochs, converged=~active, dual_history=history,
                      alpha=alpha if keep_alpha else None)
    if squeeze:
        return W[:, 0], info
    return W, info
