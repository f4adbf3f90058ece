"""Reader/writer for the IDX binary format used by the MNIST digit files."""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from ..dataset import DataFormatError, IncompleteMatrix

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# third byte of the magic number -> element type (big-endian)
_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODES = {v.str[1:]: k for k, v in _DTYPES.items()}


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return path.open(mode)


def read_idx(path) -> np.ndarray:
    path = Path(path)
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _DTYPES:
        raise DataFormatError(f"{path}: bad IDX magic number {raw[:4].hex()}")
    dtype = _DTYPES[raw[2]]
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    shape = tuple(int(x) for x in np.frombuffer(raw[4:header], dtype=">u4"))
    expected = header + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for shape {shape}, found {len(raw)}"
        )
    return np.frombuffer(raw[header:], dtype=dtype).reshape(shape)


def write_idx(array, path) -> None:
    array = np.asarray(array)
    code = _CODES.get(array.dtype.newbyteorder(">").str[1:])
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    path = Path(path)
    with _open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, array.ndim]))
        fh.write(np.asarray(array.shape, dtype=">u4").tobytes())
        fh.write(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder(">")).tobytes())


def read_idx_digits(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """All images as (n, rows*cols) floats in [0, 1] plus integer labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DataFormatError(f"{images_path}: expected a 3-d image array, got {images.ndim}-d")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: expected a 1-d label array")
    if labels.shape[0] != images.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(float)
    if images.dtype == np.dtype(">u1"):
        X /= 255.0
    return X, labels.astype(np.int64)


def balanced_indices(labels, classes, per_class: int | None, seed) -> np.ndarray:
    """Sorted row indices with ``per_class`` rows drawn without replacement from each class."""
    labels = np.asarray(labels)
    classes = sorted(set(int(c) for c in classes)) if classes is not None else np.unique(labels).tolist()
    rng = np.random.default_rng(seed)
    picked = []
    for c in classes:
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise ValueError(f"class {c} does not occur in the data")
        if per_class is None:
            picked.append(pool)
            continue
        if per_class > pool.size:
            raise ValueError(f"class {c} has {pool.size} rows, {per_class} requested")
        picked.append(rng.choice(pool, size=per_class, replace=False))
    return np.sort(np.concatenate(picked))


def load_idx_digits(
    images_path, labels_path, classes, per_class: int, seed
) -> tuple[IncompleteMatrix, np.ndarray]:
    X, y = read_idx_digits(images_path, labels_path)
    idx = balanced_indices(y, classes, per_class, seed)
    return IncompleteMatrix.complete(X[idx]), y[idx]
