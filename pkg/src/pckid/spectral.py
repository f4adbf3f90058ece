"""Kernel PCA embedding, RBF baseline kernel and Lloyd k-means with restarts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

MAX_LLOYD_ITERATIONS = 300


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    cost: float
    n_iter: int = 0


def median_heuristic_sigma(X, fraction: float = 0.2) -> float:
    """``fraction`` times the median pairwise Euclidean distance."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    sigma = fraction * float(np.median(pdist(X)))
    if sigma <= 0:
        raise ValueError("median pairwise distance is zero; RBF kernel would be degenerate")
    return sigma


def rbf_kernel(X, sigma: float) -> np.ndarray:
    """exp(-||x_i - x_j||^2 / (2 sigma^2)) with an exact unit diagonal."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sq = squareform(pdist(X, "sqeuclidean"))
    return np.exp(-sq / (2.0 * sigma**2))


def center_kernel(K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    H = np.eye(n) - 1.0 / n
    return H @ K @ H


def kernel_pca(K, k: int, center: bool = False) -> np.ndarray:
    """Z = E_k Lambda_k^{1/2} from the top-k eigenpairs of K.

    Eigenvalues are taken in descending order (lower index first on exact ties)
    and clamped at zero; each column's largest-magnitude entry is made positive.
    The kernel is used as given unless ``center`` is set.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError(f"kernel must be square, got {K.shape}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if center:
        K = center_kernel(K)
    K = 0.5 * (K + K.T)
    evals, evecs = np.linalg.eigh(K)
    order = np.argsort(-evals, kind="stable")[:k]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    return evecs * signs * np.sqrt(evals)


def _sq_dists(X: np.ndarray, centers: np.ndarray, x_sq: np.ndarray | None = None) -> np.ndarray:
    if x_sq is None:
        x_sq = np.sum(X**2, axis=1)
    d = x_sq[:, None] - 2.0 * X @ centers.T + np.sum(centers**2, axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_cost(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(np.sum((X - centers[labels]) ** 2))


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = MAX_LLOYD_ITERATIONS):
    """Lloyd iterations from the given centres until the assignment stops changing.

    A cluster that empties is re-seeded at the point farthest from its current
    centre. Returns (labels, centers, n_iter).
    """
    centers = np.array(centers, dtype=float)
    k = centers.shape[0]
    x_sq = np.sum(X**2, axis=1)
    ids = np.arange(k)
    labels = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.argmin(_sq_dists(X, centers, x_sq), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        onehot = (labels[:, None] == ids[None, :]).astype(float)
        counts = onehot.sum(axis=0)
        filled = counts > 0
        centers[filled] = (onehot.T @ X)[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            resid = np.sum((X - centers[labels]) ** 2, axis=1)
            far = int(np.argmax(resid))
            labels[far] = j
            centers[j] = X[far]
    return labels, centers, n_iter


def kmeans(X, k: int, restarts: int = 100, seed=None) -> KMeansResult:
    """Best of ``restarts`` Lloyd runs, each started from k distinct random rows.

    Restart r draws from child r of ``SeedSequence(seed)``, so fewer restarts are
    always a prefix of more. Equal costs keep the lower restart index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    best = None
    for child in ss.spawn(restarts):
        rng = np.random.default_rng(child)
        start = X[rng.choice(n, size=k, replace=False)]
        labels, centers, n_iter = lloyd(X, start)
        cost = kmeans_cost(X, labels, centers)
        if best is None or cost < best.cost:
            best = KMeansResult(labels, centers, cost, n_iter)
    return best


def spectral_cluster(
    K, k: int, restarts: int = 100, seed=None, center: bool = False
) -> np.ndarray:
    """k-means labels on the k-dimensional kernel PCA embedding of K."""
    return kmeans(kernel_pca(K, k, center=center), k, restarts, seed).labels
