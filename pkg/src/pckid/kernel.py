"""Probabilistic cluster kernel for incomplete data.

An ensemble of incomplete-data mixtures over initialisations q = 1..Q and
orders g = 2..G is fitted, each on its own random subsample, for a handful of
EM iterations. Every member's posteriors are then evaluated on all rows and the
kernel is the average of the posterior Gram matrices.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import IncompleteMatrix
from .gmm import CovarianceKind, EmConfig, GmmError, fit, posterior

log = logging.getLogger(__name__)

MAX_RETRIES = 3


@dataclass(frozen=True)
class EnsembleConfig:
    Q: int = 30
    G: int = 30
    subsample_fraction: float = 0.5
    em_iterations: int = 10
    covariance_kind: CovarianceKind = CovarianceKind.DIAGONAL
    variance_floor: float = 1e-6
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "covariance_kind", CovarianceKind(self.covariance_kind))
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if self.G < 2:
            raise ValueError("G must be >= 2")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")

    @property
    def n_members(self) -> int:
        return self.Q * (self.G - 1)


@dataclass(frozen=True, eq=False)
class EnsembleKernel:
    matrix: np.ndarray
    n_members: int
    n_skipped: int
    n_retries: int


def member_seed(base_seed: int, q: int, g: int, attempt: int = 0) -> np.random.SeedSequence:
    """Independent stream for ensemble member (q, g); retries get their own stream."""
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(q), int(g), int(attempt)))


def _fit_member(data: IncompleteMatrix, config: EnsembleConfig, q: int, g: int):
    """Posterior (N, g) of one member on all rows, or None if every attempt failed."""
    n_sub = max(int(np.floor(config.subsample_fraction * data.n + 0.5)), g)
    em = EmConfig(
        max_iterations=config.em_iterations,
        variance_floor=config.variance_floor,
        covariance_kind=config.covariance_kind,
    )
    for attempt in range(MAX_RETRIES + 1):
        sub_ss, fit_ss = member_seed(config.base_seed, q, g, attempt).spawn(2)
        rows = np.sort(np.random.default_rng(sub_ss).choice(data.n, size=n_sub, replace=False))
        try:
            result = fit(data.rows(rows), g, em, seed=fit_ss)
            gamma = posterior(result.params, data)
        except GmmError as err:
            log.debug("member q=%d g=%d attempt %d failed: %s", q, g, attempt, err)
            continue
        if np.all(np.isfinite(gamma)):
            return gamma, attempt
    return None, MAX_RETRIES


def combine_posteriors(posterior_list) -> np.ndarray:
    """Average of Gamma_m Gamma_m^T over the list."""
    posterior_list = [np.asarray(p, dtype=float) for p in posterior_list]
    if not posterior_list:
        raise ValueError("need at least one posterior matrix")
    n = posterior_list[0].shape[0]
    acc = np.zeros((n, n))
    for gamma in posterior_list:
        if gamma.ndim != 2 or gamma.shape[0] != n:
            raise ValueError(f"posterior matrices must all have {n} rows, got {gamma.shape}")
        acc += gamma @ gamma.T
    return acc / len(posterior_list)


def build_kernel(
    data: IncompleteMatrix, config: EnsembleConfig = EnsembleConfig(), n_jobs: int = 1
) -> EnsembleKernel:
    """Fit the ensemble and return the averaged posterior Gram matrix.

    Members that fail after ``MAX_RETRIES`` reseeded attempts are left out and the
    normaliser shrinks accordingly. Accumulation follows (q, g) order regardless
    of ``n_jobs``, so results are bit-identical across worker counts.
    """
    if data.n < 2:
        raise ValueError("need at least two rows")
    if data.n < config.G:
        raise ValueError(f"G={config.G} exceeds the number of rows {data.n}")
    jobs = [(q, g) for q in range(1, config.Q + 1) for g in range(2, config.G + 1)]
    acc = np.zeros((data.n, data.n))
    used = skipped = retries = 0

    def run(job):
        return _fit_member(data, config, *job)

    if n_jobs == 1:
        results = map(run, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=n_jobs)
        results = pool.map(run, jobs)
    try:
        for (q, g), (gamma, attempts) in zip(jobs, results):
            if gamma is None:
                skipped += 1
                retries += MAX_RETRIES
                continue
            retries += attempts
            acc += gamma @ gamma.T
            used += 1
    finally:
        if n_jobs != 1:
            pool.shutdown()
    if used == 0:
        raise GmmError("every ensemble member failed to fit")
    if skipped:
        log.warning("skipped %d of %d ensemble members after retries", skipped, len(jobs))
    K = acc / used
    K = 0.5 * (K + K.T)
    return EnsembleKernel(K, used, skipped, retries)


# ---------------------------------------------------------------- export


def save_kernel_csv(K: np.ndarray, path) -> None:
    np.savetxt(path, K, delimiter=",", fmt="%.17g")


def save_kernel_binary(K: np.ndarray, path) -> None:
    """Little-endian: uint64 N, then N*N float64 row-major."""
    K = np.asarray(K, dtype="<f8")
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("kernel must be square")
    with Path(path).open("wb") as fh:
        fh.write(np.asarray([n], dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(K).tobytes())


def load_kernel_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("truncated kernel file")
    n = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    if len(raw) != 8 + 8 * n * n:
        raise ValueError(f"kernel file size does not match N={n}")
    return np.frombuffer(raw[8:], dtype="<f8").reshape(n, n).copy()
