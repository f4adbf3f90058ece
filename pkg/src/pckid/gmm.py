"""EM for Gaussian mixtures fitted directly to incomplete data.

Two covariance structures are supported. The full path works per missingness
pattern: every observed-marginal covariance is factorised once per (component,
pattern) and shared by all rows with that pattern. The diagonal path needs no
factorisations and runs fully vectorised with elementwise products.

Missing cells never enter a computation; arrays are zero-filled first and the
observed mask decides which coordinates count.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import IncompleteMatrix, PatternGroup, group_by_pattern

LOG_2PI = np.log(2.0 * np.pi)
MIN_COMPONENT_MASS = 1e-8
PARAMS_SCHEMA = "pckid.gmm-params/1"


class GmmError(RuntimeError):
    """Base class for EM failures. ``iteration`` is filled in by :func:`fit`."""

    iteration: int | None = None


class DegenerateComponentError(GmmError):
    pass


class SingularCovarianceError(GmmError):
    pass


class CovarianceKind(str, enum.Enum):
    FULL = "full"
    DIAGONAL = "diag"


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture weights (K,), means (K, d) and covariances.

    ``covariances`` is (K, d, d) for the full kind and (K, d) variances for the
    diagonal kind.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    kind: CovarianceKind = CovarianceKind.FULL
    seed: int | None = None
    iterations: int = 0

    def __post_init__(self):
        kind = CovarianceKind(self.kind)
        weights = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        K, d = means.shape
        want = (K, d, d) if kind is CovarianceKind.FULL else (K, d)
        if weights.shape != (K,) or covs.shape != want:
            raise ValueError(
                f"inconsistent shapes: weights {weights.shape}, means {means.shape}, "
                f"covariances {covs.shape} (expected {want} for {kind.value})"
            )
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def variances(self) -> np.ndarray:
        """(K, d) marginal variances, whatever the covariance kind."""
        if self.kind is CovarianceKind.DIAGONAL:
            return self.covariances
        return np.diagonal(self.covariances, axis1=1, axis2=2).copy()

    def to_dict(self) -> dict:
        return {
            "schema": PARAMS_SCHEMA,
            "kind": self.kind.value,
            "seed": self.seed,
            "iterations": self.iterations,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> GmmParams:
        if obj.get("schema") != PARAMS_SCHEMA:
            raise ValueError(f"unsupported params schema {obj.get('schema')!r}")
        return cls(
            weights=np.array(obj["weights"], dtype=float),
            means=np.array(obj["means"], dtype=float),
            covariances=np.array(obj["covariances"], dtype=float),
            kind=CovarianceKind(obj["kind"]),
            seed=obj.get("seed"),
            iterations=int(obj.get("iterations", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> GmmParams:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 10
    variance_floor: float = 1e-6
    covariance_kind: CovarianceKind = CovarianceKind.FULL
    # relative log-likelihood change; 0 runs exactly max_iterations
    convergence_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "covariance_kind", CovarianceKind(self.covariance_kind))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")


@dataclass(frozen=True, eq=False)
class EStepResult:
    resp: np.ndarray  # (N, K)
    completions: np.ndarray  # (N, K, d)
    log_likelihood: float


@dataclass(frozen=True, eq=False)
class FitResult:
    params: GmmParams
    resp: np.ndarray
    log_likelihood: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- observed marginals


def observed_moments(params: GmmParams, pattern) -> tuple[np.ndarray, np.ndarray]:
    """Means (K, |o|) and covariances restricted to the observed coordinates.

    Covariances come back as (K, |o|, |o|) principal submatrices for the full
    kind and (K, |o|) variances for the diagonal kind.
    """
    obs = np.flatnonzero(np.asarray(pattern, dtype=bool))
    mu = params.means[:, obs]
    if params.kind is CovarianceKind.DIAGONAL:
        return mu, params.covariances[:, obs]
    return mu, params.covariances[:, obs[:, None], obs[None, :]]


def _responsibilities(log_weighted: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalise per-row log(pi_k N_k) with max subtraction; return (gamma, total loglik)."""
    row_max = np.max(log_weighted, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    shifted = np.exp(log_weighted - row_max)
    norm = shifted.sum(axis=1, keepdims=True)
    gamma = shifted / norm
    return gamma, float(np.sum(np.log(norm[:, 0]) + row_max[:, 0]))


def _log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights)


class _PatternBlock:
    """Cholesky factor of one component's observed-marginal covariance for one pattern."""

    __slots__ = ("obs", "mis", "chol", "logdet")

    def __init__(self, cov: np.ndarray, pattern: np.ndarray, component: int):
        self.obs = np.flatnonzero(pattern)
        self.mis = np.flatnonzero(~pattern)
        if self.obs.size == 0:
            self.chol = None
            self.logdet = 0.0
            return
        sub = cov[np.ix_(self.obs, self.obs)]
        try:
            self.chol = linalg.cholesky(sub, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            raise SingularCovarianceError(
                f"observed covariance of component {component} is not positive definite "
                f"for pattern with observed coordinates {self.obs.tolist()}"
            ) from None
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Sigma_oo^{-1} @ rhs."""
        return linalg.cho_solve((self.chol, True), rhs, check_finite=False)

    def correction(self, cov: np.ndarray) -> np.ndarray:
        """(I - Sigma S) Sigma: conditional covariance of the missing block, zero elsewhere."""
        d = cov.shape[0]
        out = np.zeros((d, d))
        if self.mis.size == 0:
            return out
        mm = np.ix_(self.mis, self.mis)
        if self.obs.size == 0:
            out[mm] = cov[mm]
            return out
        cross = cov[np.ix_(self.obs, self.mis)]
        out[mm] = cov[mm] - cross.T @ self.solve(cross)
        return out


def _full_blocks(params: GmmParams, groups: list[PatternGroup]) -> list[list[_PatternBlock]]:
    return [
        [_PatternBlock(params.covariances[k], g.pattern, k) for k in range(params.n_components)]
        for g in groups
    ]


def _full_log_densities(
    X: np.ndarray, params: GmmParams, groups: list[PatternGroup], blocks, completions=None
) -> np.ndarray:
    N, K = X.shape[0], params.n_components
    logdens = np.empty((N, K))
    for g, group_blocks in zip(groups, blocks):
        rows = g.row_indices
        for k, blk in enumerate(group_blocks):
            mu = params.means[k]
            if blk.chol is None:
                logdens[rows, k] = 0.0
                if completions is not None:
                    completions[rows, k, :] = mu
                continue
            diff = X[np.ix_(rows, blk.obs)] - mu[blk.obs]
            white = linalg.solve_triangular(blk.chol, diff.T, lower=True, check_finite=False)
            maha = np.sum(white**2, axis=0)
            logdens[rows, k] = -0.5 * (blk.obs.size * LOG_2PI + blk.logdet + maha)
            if completions is not None:
                filled = np.empty((rows.size, X.shape[1]))
                filled[:, blk.obs] = X[np.ix_(rows, blk.obs)]
                if blk.mis.size:
                    cross = params.covariances[k][np.ix_(blk.mis, blk.obs)]
                    filled[:, blk.mis] = mu[blk.mis] + (cross @ blk.solve(diff.T)).T
                completions[rows, k, :] = filled
    return logdens


def _diag_log_densities(X: np.ndarray, M: np.ndarray, params: GmmParams) -> np.ndarray:
    var = params.covariances
    if np.any(var <= 0):
        k = int(np.flatnonzero(np.any(var <= 0, axis=1))[0])
        raise SingularCovarianceError(f"component {k} has a non-positive variance")
    prec = 1.0 / var
    mu = params.means
    # sum over observed d of log(2 pi var) + (x - mu)^2 / var, expanded into matrix products
    quad = (
        (M * X * X) @ prec.T
        - 2.0 * (M * X) @ (mu * prec).T
        + M @ (mu * mu * prec).T
    )
    return -0.5 * (M @ (LOG_2PI + np.log(var)).T + np.maximum(quad, 0.0))


def _diag_completions(X: np.ndarray, M: np.ndarray, params: GmmParams) -> np.ndarray:
    # y = mu + sigma * s * (x - mu), s = 1/sigma on observed coordinates, 0 otherwise
    sigma = params.covariances[None, :, :]
    s = M[:, None, :] / sigma
    mu = params.means[None, :, :]
    return mu + sigma * s * (X[:, None, :] - mu)


def _check_dims(data: IncompleteMatrix, params: GmmParams) -> None:
    if data.d != params.dim:
        raise ValueError(f"data has {data.d} dimensions but the model has {params.dim}")


# ---------------------------------------------------------------- E / M steps


def e_step(
    data: IncompleteMatrix,
    params: GmmParams,
    groups: list[PatternGroup] | None = None,
    with_completions: bool = True,
) -> EStepResult:
    """Responsibilities, conditional-mean completions (N, K, d) and log-likelihood.

    The diagonal kind may skip the completions (``with_completions=False``);
    :func:`m_step` then works from sufficient statistics instead.
    """
    _check_dims(data, params)
    X = data.filled(0.0)
    logw = _log_weights(params.weights)
    if params.kind is CovarianceKind.DIAGONAL:
        M = data.mask.astype(float)
        logdens = _diag_log_densities(X, M, params)
        completions = _diag_completions(X, M, params) if with_completions else None
    else:
        groups = group_by_pattern(data) if groups is None else groups
        completions = np.empty((data.n, params.n_components, data.d))
        logdens = _full_log_densities(X, params, groups, _full_blocks(params, groups), completions)
    gamma, ll = _responsibilities(logdens + logw)
    return EStepResult(gamma, completions, ll)


def posterior(
    params: GmmParams, data: IncompleteMatrix, groups: list[PatternGroup] | None = None
) -> np.ndarray:
    """Responsibilities of each row under its own observed marginal.

    Rows without observed coordinates get the mixture weights.
    """
    _check_dims(data, params)
    X = data.filled(0.0)
    if params.kind is CovarianceKind.DIAGONAL:
        logdens = _diag_log_densities(X, data.mask.astype(float), params)
    else:
        groups = group_by_pattern(data) if groups is None else groups
        logdens = _full_log_densities(X, params, groups, _full_blocks(params, groups))
    gamma, _ = _responsibilities(logdens + _log_weights(params.weights))
    return gamma


def log_likelihood(params: GmmParams, data: IncompleteMatrix) -> float:
    """Observed-data log-likelihood sum_i log sum_k pi_k N(x_i^o | mu_k^o, Sigma_k^o)."""
    return e_step(data, params).log_likelihood


def omega_terms(
    data: IncompleteMatrix,
    resp: np.ndarray,
    completions: np.ndarray,
    params_prev: GmmParams,
    new_means: np.ndarray,
) -> np.ndarray:
    """Per-row, per-component scatter terms entering the covariance update.

    Full kind: (N, K, d, d) matrices
    gamma * ((Y - mu_new)(Y - mu_new)^T + (I - Sigma S^o) Sigma).
    Diagonal kind: (N, K, d) vectors
    gamma * ((y - mu_new)^2 + sigma - sigma * s * sigma).

    Memory grows with N*K*d^2; :func:`m_step` accumulates the same sums per
    pattern instead of materialising this.
    """
    dev = completions - new_means[None, :, :]
    if params_prev.kind is CovarianceKind.DIAGONAL:
        sigma = params_prev.covariances[None, :, :]
        s = data.mask[:, None, :] / sigma
        return resp[:, :, None] * (dev * dev + sigma - sigma * s * sigma)
    N, K, d = completions.shape
    out = np.einsum("nki,nkj->nkij", dev, dev)
    for g in group_by_pattern(data):
        for k in range(K):
            corr = _PatternBlock(params_prev.covariances[k], g.pattern, k).correction(
                params_prev.covariances[k]
            )
            out[g.row_indices, k] += corr
    return resp[:, :, None, None] * out


def _diag_m_step_from_stats(data, resp, params_prev, mass, variance_floor) -> GmmParams:
    """Diagonal update without materialising the (N, K, d) completions.

    With y = x on observed and mu_prev on missing coordinates, the weighted sums
    of y and (y - mu_new)^2 reduce to products of resp with the observed data.
    """
    M = data.mask.astype(float)
    X = data.filled(0.0)
    mu_prev = params_prev.means
    sigma = params_prev.covariances
    obs_mass = resp.T @ M
    miss_mass = mass[:, None] - obs_mass
    sum_x = resp.T @ X
    sum_x2 = resp.T @ (X * X)
    means = (sum_x + mu_prev * miss_mass) / mass[:, None]
    scatter = (
        sum_x2
        - 2.0 * means * sum_x
        + means**2 * obs_mass
        + (mu_prev - means) ** 2 * miss_mass
        + sigma * miss_mass
    )
    var = np.maximum(scatter, 0.0) / mass[:, None] + variance_floor
    return GmmParams(mass / resp.shape[0], means, var, CovarianceKind.DIAGONAL)


def m_step(
    data: IncompleteMatrix,
    resp: np.ndarray,
    completions: np.ndarray | None,
    params_prev: GmmParams,
    variance_floor: float = 1e-6,
    groups: list[PatternGroup] | None = None,
) -> GmmParams:
    N, K = resp.shape
    mass = resp.sum(axis=0)
    if np.any(mass < MIN_COMPONENT_MASS):
        k = int(np.argmin(mass))
        raise DegenerateComponentError(
            f"component {k} has total responsibility {mass[k]:.3g} < {MIN_COMPONENT_MASS}"
        )
    weights = mass / N

    if params_prev.kind is CovarianceKind.DIAGONAL:
        if completions is None:
            return _diag_m_step_from_stats(data, resp, params_prev, mass, variance_floor)
        sigma = params_prev.covariances
        s = data.mask[None, :, :] / sigma[:, None, :]
        means = np.einsum("nk,nkd->kd", resp, completions) / mass[:, None]
        dev = completions - means[None, :, :]
        # sum_i gamma (sigma - sigma s sigma)
        shrink = np.einsum("nk,knd->kd", resp, sigma[:, None, :] - sigma[:, None, :] * s * sigma[:, None, :])
        scatter = np.einsum("nk,nkd->kd", resp, dev * dev) + shrink
        var = scatter / mass[:, None] + variance_floor
        return GmmParams(weights, means, var, CovarianceKind.DIAGONAL)

    means = np.einsum("nk,nkd->kd", resp, completions) / mass[:, None]
    dev = completions - means[None, :, :]
    groups = group_by_pattern(data) if groups is None else groups
    d = data.d
    covs = np.einsum("nk,nki,nkj->kij", resp, dev, dev)
    for g in groups:
        if g.pattern.all():
            continue
        group_mass = resp[g.row_indices].sum(axis=0)
        for k in range(K):
            cov_k = params_prev.covariances[k]
            blk = _PatternBlock(cov_k, g.pattern, k)
            covs[k] += group_mass[k] * blk.correction(cov_k)
    covs /= mass[:, None, None]
    covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
    covs += variance_floor * np.eye(d)[None, :, :]
    return GmmParams(weights, means, covs, CovarianceKind.FULL)


# ---------------------------------------------------------------- initialisation and fitting


def init_params(
    data: IncompleteMatrix,
    n_components: int,
    seed,
    kind: CovarianceKind = CovarianceKind.FULL,
    variance_floor: float = 1e-6,
) -> GmmParams:
    """Mean-impute, pick K distinct rows as centres, do one k-means pass, then
    take per-cluster mean, covariance and proportion.

    The imputed copy only serves this initialisation.
    """
    kind = CovarianceKind(kind)
    N, d = data.shape
    K = int(n_components)
    if K < 1 or K > N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    counts = data.mask.sum(axis=0)
    col_mean = np.divide(
        data.filled(0.0).sum(axis=0), counts, out=np.zeros(d), where=counts > 0
    )
    X = np.where(data.mask, data.values, col_mean)

    rng = np.random.default_rng(seed)
    centers = X[rng.choice(N, size=K, replace=False)]
    sq = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    labels = np.argmin(sq, axis=1)

    weights = np.zeros(K)
    means = centers.copy()
    covs = np.zeros((K, d, d)) if kind is CovarianceKind.FULL else np.zeros((K, d))
    for k in range(K):
        members = X[labels == k]
        weights[k] = members.shape[0] / N
        if members.shape[0] == 0:
            continue
        means[k] = members.mean(axis=0)
        if members.shape[0] > 1:
            dev = members - means[k]
            if kind is CovarianceKind.FULL:
                covs[k] = dev.T @ dev / members.shape[0]
            else:
                covs[k] = np.mean(dev * dev, axis=0)
    if kind is CovarianceKind.FULL:
        covs += variance_floor * np.eye(d)[None, :, :]
    else:
        covs += variance_floor
    seed_tag = int(seed) if isinstance(seed, (int, np.integer)) else None
    return GmmParams(weights, means, covs, kind, seed=seed_tag)


def fit(
    data: IncompleteMatrix,
    n_components: int,
    config: EmConfig = EmConfig(),
    seed=None,
    init: GmmParams | None = None,
) -> FitResult:
    """Run EM from :func:`init_params` (or ``init``) on the incomplete data.

    The returned log-likelihood trace holds one value per E-step, including the
    final evaluation under the returned parameters, whose responsibilities are
    returned alongside.
    """
    kind = config.covariance_kind
    groups = group_by_pattern(data) if kind is CovarianceKind.FULL else None
    params = init if init is not None else init_params(
        data, n_components, seed, kind, config.variance_floor
    )
    trace: list[float] = []
    it = 0
    try:
        for it in range(config.max_iterations):
            est = e_step(data, params, groups, with_completions=kind is CovarianceKind.FULL)
            trace.append(est.log_likelihood)
            if config.convergence_tol > 0 and len(trace) > 1:
                prev = trace[-2]
                if abs(trace[-1] - prev) <= config.convergence_tol * abs(prev):
                    return FitResult(_stamp(params, seed, it), est.resp, trace)
            params = m_step(data, est.resp, est.completions, params, config.variance_floor, groups)
        it = config.max_iterations
        final = e_step(data, params, groups, with_completions=False)
    except GmmError as err:
        err.iteration = it
        err.args = (f"EM iteration {it}: {err.args[0] if err.args else err}",)
        raise
    trace.append(final.log_likelihood)
    return FitResult(_stamp(params, seed, config.max_iterations), final.resp, trace)


def _stamp(params: GmmParams, seed, iterations: int) -> GmmParams:
    seed_tag = int(seed) if isinstance(seed, (int, np.integer)) else params.seed
    return GmmParams(
        params.weights, params.means, params.covariances, params.kind, seed_tag, iterations
    )
