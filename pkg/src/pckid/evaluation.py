"""Clustering accuracy under the best one-to-one label mapping."""

from __future__ import annotations

import numpy as np


def _assignment_cost(cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimum-cost perfect matching of a square matrix (Kuhn-Munkres with potentials).

    Returns (total, col_of_row).
    """
    n = cost.shape[0]
    if n == 0:
        return 0.0, np.zeros(0, dtype=int)
    INF = np.inf
    # 1-based arrays; index 0 is the virtual column used during augmentation
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while True:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        col_of[row_of[j] - 1] = j - 1
    total = float(cost[np.arange(n), col_of].sum())
    return total, col_of


def hungarian(cost) -> list[tuple[int, int]]:
    """Optimal assignment as sorted (row, col) pairs.

    Among all optimal matchings the lexicographically smallest column sequence
    is returned, so ties resolve deterministically.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    best, _ = _assignment_cost(cost)
    tol = 1e-12 * max(1.0, float(np.abs(cost).sum()))
    rows = list(range(n))
    cols = list(range(n))
    fixed = 0.0
    pairs = []
    for i in range(n):
        rest_rows = rows[1:]
        for c in cols:
            rest_cols = [x for x in cols if x != c]
            sub = cost[np.ix_(rest_rows, rest_cols)]
            total = fixed + cost[i, c] + _assignment_cost(sub)[0]
            if total <= best + tol:
                pairs.append((i, c))
                fixed += cost[i, c]
                cols = rest_cols
                break
        rows = rest_rows
    return pairs


def assignment_total(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[i, j] for i, j in pairs))


def contingency(y_true, y_pred) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Square count matrix (pred ids x true ids), zero-padded to equal alphabets."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    true_ids, t = np.unique(y_true, return_inverse=True)
    pred_ids, p = np.unique(y_pred, return_inverse=True)
    k = max(len(true_ids), len(pred_ids))
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (p.reshape(-1), t.reshape(-1)), 1)
    return table, pred_ids, true_ids


def clustering_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(
            f"label vectors must be 1-d and equally long, got {y_true.shape} and {y_pred.shape}"
        )
    if y_true.size == 0:
        raise ValueError("need at least one label")
    table, _, _ = contingency(y_true, y_pred)
    pairs = hungarian(-table)
    matched = sum(int(table[i, j]) for i, j in pairs)
    return matched / y_true.size
