"""Small synthetic benchmarks with known cluster structure."""

from __future__ import annotations

import numpy as np


def two_blobs(n_per_blob: int = 100, dim: int = 5, separation: float = 6.0, seed=0):
    """Two isotropic unit-variance Gaussian blobs whose means differ by
    ``separation`` along the diagonal direction. Returns (X, y)."""
    rng = np.random.default_rng(seed)
    shift = np.full(dim, separation / np.sqrt(dim))
    X = np.vstack(
        [rng.standard_normal((n_per_blob, dim)), rng.standard_normal((n_per_blob, dim)) + shift]
    )
    y = np.repeat([0, 1], n_per_blob)
    return X, y


def sample_mixture(weights, means, covs, n: int, seed=0):
    """Draw n points from a full-covariance Gaussian mixture. Returns (X, component ids)."""
    rng = np.random.default_rng(seed)
    weights = np.asarray(weights, dtype=float)
    z = rng.choice(len(weights), size=n, p=weights / weights.sum())
    X = np.empty((n, np.shape(means)[1]))
    for k in range(len(weights)):
        idx = np.flatnonzero(z == k)
        X[idx] = rng.multivariate_normal(means[k], covs[k], size=idx.size)
    return X, z
