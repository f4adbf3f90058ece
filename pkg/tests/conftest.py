import sys

import numpy as np
import pytest

from pckid.dataset import IncompleteMatrix, apply_mcar


def random_incomplete(rng, n, d, rate=0.3, keep_one=True):
    X = rng.standard_normal((n, d))
    data = apply_mcar(IncompleteMatrix.complete(X), rate, rng.integers(1 << 31))
    if keep_one:
        mask = data.mask.copy()
        # every column keeps at least one observed entry
        for j in np.flatnonzero(~mask.any(axis=0)):
            mask[0, j] = True
        data = IncompleteMatrix(X, mask)
    return data


def garble(data: IncompleteMatrix, rng) -> IncompleteMatrix:
    """Same matrix with arbitrary junk written into the unobserved cells."""
    junk = IncompleteMatrix.__new__(IncompleteMatrix)
    values = data.values.copy()
    values[~data.mask] = rng.normal(0, 1e6, size=int((~data.mask).sum()))
    object.__setattr__(junk, "values", values)
    object.__setattr__(junk, "mask", data.mask.copy())
    return junk


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mar_by_first_column(X, rate, seed):
    """MAR mask: column 0 always observed, the rest hidden more often as x0 grows.

    The hiding probability rises linearly with the rank of x0 and is scaled
    so about ``rate`` of all cells go missing.
    """
    rng = np.random.default_rng(seed)
    N, d = X.shape
    rank = np.argsort(np.argsort(X[:, 0])) / (N - 1)
    p = np.clip(rate * d / (d - 1) * 2 * rank, 0.0, 1.0)
    mask = np.ones((N, d), dtype=bool)
    mask[:, 1:] = rng.random((N, d - 1)) >= p[:, None]
    return IncompleteMatrix(X, mask)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
