"""Covariance oracles and stationary kernels.

A covariance oracle exposes a matrix entrywise through vectorized
``block(rows, cols)`` calls, so that the decomposition only ever touches the
O(nN) entries it actually needs.  All oracles are safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "DenseOracle",
    "DiagonalOracle",
    "ZeroOracle",
    "KernelOracle",
    "ForecastOracle",
    "CountingOracle",
    "MaternKernel",
    "densify",
]


@dataclass(frozen=True)
class MaternKernel:
    """Matérn covariance with half-integer smoothness 0.5 or 1.5.

    ``metric`` is either ``"euclidean"`` or ``"circular"``; the latter wraps
    1D coordinates on a circle of unit circumference.
    """

    nu: float
    length_scale: float
    variance: float = 1.0
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if self.nu not in (0.5, 1.5):
            raise ValueError("nu must be 0.5 or 1.5")
        if self.length_scale <= 0 or self.variance <= 0:
            raise ValueError("length_scale and variance must be positive")
        if self.metric not in ("euclidean", "circular"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def distances(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        x1 = np.atleast_2d(np.asarray(x1, dtype=float))
        x2 = np.atleast_2d(np.asarray(x2, dtype=float))
        if self.metric == "circular":
            if x1.shape[1] != 1:
                raise ValueError("circular metric requires 1D coordinates")
            diff = np.abs(x1[:, 0][:, None] - x2[:, 0][None, :])
            return np.minimum(diff, 1.0 - diff)
        return cdist(x1, x2)

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        d = self.distances(x1, x2) / self.length_scale
        if self.nu == 0.5:
            return self.variance * np.exp(-d)
        s = np.sqrt(3.0) * d
        return self.variance * (1.0 + s) * np.exp(-s)


class DenseOracle:
    """Oracle over an explicitly stored symmetric matrix."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("matrix must be square")
        self.n = self.matrix.shape[0]

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return self.matrix[np.ix_(rows, cols)]


class DiagonalOracle:
    """Diagonal covariance; ``values`` may be a scalar or a length-n vector."""

    def __init__(self, n: int, values=1.0):
        self.n = n
        self.values = np.broadcast_to(np.asarray(values, dtype=float), (n,))

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        out = np.zeros((len(rows), len(cols)))
        eq = np.asarray(rows)[:, None] == np.asarray(cols)[None, :]
        i, j = np.nonzero(eq)
        out[i, j] = self.values[np.asarray(rows)[i]]
        return out


class ZeroOracle:
    def __init__(self, n: int):
        self.n = n

    def block(self, rows, cols) -> np.ndarray:
        return np.zeros((len(rows), len(cols)))


class KernelOracle:
    """Kernel evaluated lazily on a fixed set of grid points."""

    def __init__(self, kernel: MaternKernel, grid: np.ndarray):
        self.kernel = kernel
        self.grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if self.grid.shape[0] == 1 and self.grid.shape[1] > 1:
            self.grid = self.grid.T
        self.n = self.grid.shape[0]

    def block(self, rows, cols) -> np.ndarray:
        return self.kernel(self.grid[rows], self.grid[cols])


class ForecastOracle:
    """Forecast covariance entries from a row-sparse factor plus innovations.

    Entry (i, j) is the inner product of the i-th and j-th rows of the
    evolved factor plus the corresponding innovation covariance entry.  The
    factor rows live in internal (hierarchical) order; ``iperm`` translates
    the original grid ids used by callers.
    """

    def __init__(self, factor_csr, q_oracle, iperm: np.ndarray | None = None):
        self.factor = factor_csr.tocsr()
        self.q = q_oracle
        self.iperm = iperm
        self.n = self.factor.shape[0]

    def block(self, rows, cols) -> np.ndarray:
        r = self.iperm[rows] if self.iperm is not None else np.asarray(rows)
        c = self.iperm[cols] if self.iperm is not None else np.asarray(cols)
        out = (self.factor[r] @ self.factor[c].T).toarray()
        if self.q is not None:
            out = out + self.q.block(rows, cols)
        return out


class CountingOracle:
    """Wrapper counting how many entries have been requested."""

    def __init__(self, inner):
        self.inner = inner
        self.n = inner.n
        self.entries = 0
        self.calls = 0

    def block(self, rows, cols) -> np.ndarray:
        self.entries += len(rows) * len(cols)
        self.calls += 1
        return self.inner.block(rows, cols)


def densify(oracle, guard: int = 4000) -> np.ndarray:
    """Materialize an oracle as a dense matrix, refusing large dimensions."""
    if oracle.n > guard:
        raise ValueError(f"refusing to densify n={oracle.n} > guard={guard}")
    idx = np.arange(oracle.n)
    return oracle.block(idx, idx)
