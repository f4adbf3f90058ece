"""Incomplete data container, missingness generators, preprocessing and imputers."""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised when an input file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class IncompleteMatrix:
    """N x d values with an N x d observed mask (True = observed).

    Unobserved cells are overwritten with NaN on construction. Nothing
    downstream is allowed to look at them; read ``mask`` instead.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-d, got shape {values.shape}")
        if values.shape != mask.shape:
            raise ValueError(
                f"values shape {values.shape} does not match mask shape {mask.shape}"
            )
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def complete(cls, X) -> IncompleteMatrix:
        X = np.asarray(X, dtype=float)
        return cls(X, np.ones(X.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Copy of the values with missing cells set to ``fill``."""
        return np.where(self.mask, self.values, fill)

    def rows(self, index) -> IncompleteMatrix:
        return IncompleteMatrix(self.values[index], self.mask[index])

    def columns(self, index) -> IncompleteMatrix:
        return IncompleteMatrix(self.values[:, index], self.mask[:, index])

    def with_mask(self, mask) -> IncompleteMatrix:
        """Same values, new mask. Cells may only be hidden, never revealed."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise ValueError("cannot mark previously missing cells as observed")
        return IncompleteMatrix(self.values, mask)

    def observed_fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 1.0

    def fingerprint(self) -> str:
        """SHA-256 over observed values and mask; placeholders do not contribute."""
        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype="<i8").tobytes())
        h.update(np.packbits(self.mask).tobytes())
        h.update(np.ascontiguousarray(self.filled(0.0), dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class PatternGroup:
    pattern: np.ndarray
    row_indices: np.ndarray


class ImputationStrategy(str, enum.Enum):
    ZERO = "zero"
    MEAN = "mean"
    MEDIAN = "median"
    MOST_FREQUENT = "most_frequent"


# ---------------------------------------------------------------- I/O


def load_csv(
    path,
    missing_token: str = "",
    header: bool = False,
    delimiter: str = ",",
) -> IncompleteMatrix:
    """Read a rectangular numeric CSV; ``missing_token`` and empty cells are missing."""
    path = Path(path)
    rows: list[list[float]] = []
    masks: list[list[bool]] = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, record in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not record:
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} fields, found {len(record)}"
                )
            vals, obs = [], []
            for col, cell in enumerate(record):
                cell = cell.strip()
                if cell == "" or cell == missing_token:
                    vals.append(np.nan)
                    obs.append(False)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: column {col} is not numeric: {cell!r}"
                    ) from None
                obs.append(True)
            rows.append(vals)
            masks.append(obs)
    if width is None:
        return IncompleteMatrix(np.empty((0, 0)), np.empty((0, 0), dtype=bool))
    return IncompleteMatrix(np.array(rows, dtype=float), np.array(masks, dtype=bool))


def save_csv(data: IncompleteMatrix, path, missing_token: str = "") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for vals, obs in zip(data.values, data.mask):
            writer.writerow([repr(float(v)) if o else missing_token for v, o in zip(vals, obs)])


def save_mask_csv(data: IncompleteMatrix, path) -> None:
    np.savetxt(path, data.mask.astype(int), fmt="%d", delimiter=",")


# ---------------------------------------------------------------- missingness


def _require_complete(data: IncompleteMatrix, what: str) -> None:
    if not data.mask.all():
        raise ValueError(f"{what} expects a fully observed input")


def _check_probability(p: float, name: str) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


def apply_mcar(data: IncompleteMatrix, rate: float, seed) -> IncompleteMatrix:
    """Hide each cell independently with probability ``rate``."""
    _check_probability(rate, "rate")
    _require_complete(data, "apply_mcar")
    rng = np.random.default_rng(seed)
    hide = rng.random(data.shape) < rate
    return data.with_mask(data.mask & ~hide)


def quadrant_masks(side: int) -> np.ndarray:
    """Boolean (4, side*side) array; row q marks the pixels of quadrant q.

    Quadrants are ordered top-left, top-right, bottom-left, bottom-right on a
    row-major unraveled image.
    """
    if side < 2 or side % 2:
        raise ValueError(f"image side must be even and >= 2, got {side}")
    h = side // 2
    out = np.zeros((4, side, side), dtype=bool)
    out[0, :h, :h] = True
    out[1, :h, h:] = True
    out[2, h:, :h] = True
    out[3, h:, h:] = True
    return out.reshape(4, side * side)


def apply_mar_quadrant(
    images: IncompleteMatrix, p_m: float, side: int, seed
) -> IncompleteMatrix:
    """Remove one uniformly chosen quadrant from round(p_m * N) random images."""
    _check_probability(p_m, "p_m")
    if images.d != side * side:
        raise ValueError(f"expected {side * side} columns for side {side}, got {images.d}")
    _require_complete(images, "apply_mar_quadrant")
    quads = quadrant_masks(side)
    rng = np.random.default_rng(seed)
    n_sel = int(np.floor(p_m * images.n + 0.5))
    rows = rng.choice(images.n, size=n_sel, replace=False)
    which = rng.integers(0, 4, size=n_sel)
    mask = images.mask.copy()
    mask[rows] &= ~quads[which]
    return images.with_mask(mask)


def apply_nmar_censor(data: IncompleteMatrix, quantile: float) -> IncompleteMatrix:
    """Hide values strictly above their column's empirical ``quantile`` (linear interpolation)."""
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    _require_complete(data, "apply_nmar_censor")
    thresholds = np.quantile(data.values, quantile, axis=0)
    return data.with_mask(data.mask & ~(data.values > thresholds))


# ---------------------------------------------------------------- preprocessing


def observed_mean_std(data: IncompleteMatrix) -> tuple[np.ndarray, np.ndarray]:
    counts = data.mask.sum(axis=0)
    if np.any(counts == 0):
        bad = np.flatnonzero(counts == 0).tolist()
        raise ValueError(
            f"dimensions {bad} have no observed values; drop them first (remove_zero_variance)"
        )
    X = data.filled(0.0)
    mean = X.sum(axis=0) / counts
    centered = np.where(data.mask, X - mean, 0.0)
    std = np.sqrt((centered**2).sum(axis=0) / counts)
    return mean, std


def standardize_observed(
    data: IncompleteMatrix,
) -> tuple[IncompleteMatrix, tuple[np.ndarray, np.ndarray]]:
    """Zero-mean, unit population std per dimension over observed entries.

    Dimensions with zero spread are centered but left unscaled.
    """
    mean, std = observed_mean_std(data)
    scale = np.where(std > 0, std, 1.0)
    Z = (data.filled(0.0) - mean) / scale
    return IncompleteMatrix(Z, data.mask), (mean, std)


def remove_zero_variance(data: IncompleteMatrix) -> tuple[IncompleteMatrix, np.ndarray]:
    """Drop columns whose observed values are constant or absent."""
    X = data.filled(np.nan)
    with np.errstate(all="ignore"):
        hi = np.where(data.mask, X, -np.inf).max(axis=0)
        lo = np.where(data.mask, X, np.inf).min(axis=0)
    keep = np.flatnonzero(data.mask.any(axis=0) & (hi > lo))
    if keep.size == 0:
        raise ValueError("every dimension is constant or fully missing")
    return data.columns(keep), keep


def _column_statistic(col: np.ndarray, strategy: ImputationStrategy) -> float:
    if strategy is ImputationStrategy.MEAN:
        return float(col.mean())
    if strategy is ImputationStrategy.MEDIAN:
        return float(np.median(col))
    # smallest value among the modes, so ties are deterministic
    vals, counts = np.unique(col, return_counts=True)
    return float(vals[np.argmax(counts)])


def impute(data: IncompleteMatrix, strategy) -> np.ndarray:
    """Return a complete copy with missing cells filled per column."""
    strategy = ImputationStrategy(strategy)
    if strategy is ImputationStrategy.ZERO:
        return data.filled(0.0)
    fill = np.empty(data.d)
    for j in range(data.d):
        col = data.values[data.mask[:, j], j]
        if col.size == 0:
            raise ValueError(f"cannot impute column {j} with {strategy.value}: no observed values")
        fill[j] = _column_statistic(col, strategy)
    return np.where(data.mask, data.values, fill)


def group_by_pattern(data: IncompleteMatrix) -> list[PatternGroup]:
    """Partition rows by identical mask rows, ordered lexicographically by pattern
    (False < True, first coordinate most significant)."""
    if data.n == 0:
        return []
    patterns, inverse = np.unique(data.mask, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(patterns) + 1))
    return [
        PatternGroup(patterns[g].copy(), order[bounds[g] : bounds[g + 1]])
        for g in range(len(patterns))
    ]
