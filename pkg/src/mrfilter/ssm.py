"""Linear Gaussian state-space models and truth simulation.

A model is y_t = H_t x_t + v_t on top of x_t = A_t x_{t-1} + w_t, with
v_t ~ N(0, R_t) and w_t ~ N(0, Q_t), plus initial moments (mu0, Sigma0).
The builders below discretize advection-diffusion dynamics on regular 1D
(circular) and 2D (reflecting) grids with Matérn innovation covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky

from .covariance import (DiagonalOracle, KernelOracle, MaternKernel,
                         ZeroOracle, densify)
from .partition import PartitionTree

__all__ = [
    "StateSpaceModel",
    "SimulationResult",
    "build_1d_advection_diffusion",
    "build_2d_advection_diffusion",
    "simulate_truth",
    "evolution_locality",
]

DENSE_GUARD = 4000


@dataclass
class StateSpaceModel:
    """Time-invariant dynamics with per-step observation schemes.

    ``observation(t)`` returns ``(H_t, r_diag)`` where H_t is a sparse
    selection-style matrix and r_diag the diagonal of R_t.  ``evolution_scale``
    is set only when the builder guarantees A = c I; together with a zero
    innovation it enables the factor-rescaling forecast shortcut downstream.
    """

    grid: np.ndarray
    evolution: sp.csr_matrix
    innovation: object
    observation: Callable[[int], tuple[sp.csr_matrix, np.ndarray]]
    mu0: np.ndarray
    sigma0: object
    evolution_scale: float | None = None
    zero_innovation: bool = False
    mean_offset: Callable[[int], np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    def A(self, t: int) -> sp.csr_matrix:
        return self.evolution

    def H(self, t: int) -> sp.csr_matrix:
        return self.observation(t)[0]

    def R_diag(self, t: int) -> np.ndarray:
        return self.observation(t)[1]

    def offset(self, t: int) -> np.ndarray:
        if self.mean_offset is None:
            return np.zeros(self.n)
        return np.asarray(self.mean_offset(t), dtype=float)


@dataclass
class SimulationResult:
    """Simulated truth x_0..x_T and observations y_1..y_T."""

    x: np.ndarray                     # (T+1, n)
    y: dict = field(default_factory=dict)   # t -> observation vector


class _RandomSubsetObservation:
    """Observe a random subset of grid points, redrawn independently per t."""

    def __init__(self, n: int, n_t: int, sigma_v2: float, seed: int):
        self.n = n
        self.n_t = n_t
        self.sigma_v2 = sigma_v2
        self.seed = seed
        self._cache: dict[int, tuple[sp.csr_matrix, np.ndarray]] = {}

    def __call__(self, t: int) -> tuple[sp.csr_matrix, np.ndarray]:
        hit = self._cache.get(t)
        if hit is None:
            rng = np.random.default_rng(
                np.random.SeedSequence(self.seed, spawn_key=(0x0B5, t)))
            idx = np.sort(rng.choice(self.n, size=self.n_t, replace=False))
            h = sp.csr_matrix(
                (np.ones(self.n_t), (np.arange(self.n_t), idx)),
                shape=(self.n_t, self.n))
            hit = self._cache[t] = (h, np.full(self.n_t, self.sigma_v2))
        return hit


def _check_obs_fraction(obs_fraction: float) -> None:
    if not 0.0 < obs_fraction <= 1.0:
        raise ValueError(f"obs_fraction must be in (0, 1], got {obs_fraction}")


def build_1d_advection_diffusion(
        n_g: int,
        alpha: float | None = None,
        beta: float | None = None,
        dt: float = 1.0,
        nu: float = 0.5,
        length_scale: float = 0.1,
        sigma_w2: float = 0.5,
        sigma_v2: float = 0.05,
        obs_fraction: float = 0.3,
        seed: int = 0,
        metric: str = "circular",
        static: bool = False) -> StateSpaceModel:
    """Explicit finite-difference advection-diffusion on the unit circle.

    The stencil is A[i,i] = 1 - 2 a, A[i, i +/- 1] = a -/+ b with
    a = alpha dt / ds^2 and b = beta dt / (2 ds), wrapped around; rows sum
    to one.  Defaults keep the scheme stable with visible advection.
    """
    _check_obs_fraction(obs_fraction)
    ds = 1.0 / n_g
    if static:
        # Fixed state: identity evolution, no innovation, the kernel as the
        # initial covariance.  Useful for exactness studies.
        grid = ((np.arange(n_g) + 0.5) * ds).reshape(-1, 1)
        kernel = MaternKernel(nu=nu, length_scale=length_scale,
                              variance=sigma_w2, metric=metric)
        n_t = int(round(obs_fraction * n_g))
        return StateSpaceModel(
            grid=grid,
            evolution=sp.identity(n_g, format="csr"),
            innovation=ZeroOracle(n_g),
            observation=_RandomSubsetObservation(n_g, n_t, sigma_v2, seed),
            mu0=np.zeros(n_g),
            sigma0=KernelOracle(kernel, grid),
            zero_innovation=True,
        )
    if alpha is None:
        alpha = 0.4 * ds * ds / dt
    if beta is None:
        beta = 0.2 * ds / dt
    a = alpha * dt / (ds * ds)
    if a > 0.5 + 1e-12:
        raise ValueError(
            f"explicit scheme unstable: alpha*dt/ds^2 = {a:.4f} > 1/2")
    b = beta * dt / (2.0 * ds)

    grid = ((np.arange(n_g) + 0.5) * ds).reshape(-1, 1)
    if a == 0.0 and b == 0.0:
        evo = sp.identity(n_g, format="csr")
        scale = 1.0
    else:
        i = np.arange(n_g)
        rows = np.concatenate([i, i, i])
        cols = np.concatenate([i, (i + 1) % n_g, (i - 1) % n_g])
        vals = np.concatenate([
            np.full(n_g, 1.0 - 2.0 * a),
            np.full(n_g, a - b),
            np.full(n_g, a + b),
        ])
        evo = sp.csr_matrix((vals, (rows, cols)), shape=(n_g, n_g))
        scale = None

    if sigma_w2 > 0:
        kernel = MaternKernel(nu=nu, length_scale=length_scale,
                              variance=sigma_w2, metric=metric)
        q = sigma0 = KernelOracle(kernel, grid)
    else:
        q = sigma0 = ZeroOracle(n_g)
    n_t = int(round(obs_fraction * n_g))
    return StateSpaceModel(
        grid=grid,
        evolution=evo,
        innovation=q,
        observation=_RandomSubsetObservation(n_g, n_t, sigma_v2, seed),
        mu0=np.zeros(n_g),
        sigma0=sigma0,
        evolution_scale=scale,
        zero_innovation=sigma_w2 == 0.0,
    )


def build_2d_advection_diffusion(
        nx: int,
        ny: int,
        alpha: float | None = None,
        beta: tuple[float, float] = (None, None),
        dt: float = 1.0,
        nu: float = 0.5,
        length_scale: float = 0.15,
        sigma_w2: float = 0.5,
        sigma_v2: float = 0.25,
        obs_fraction: float = 0.1,
        seed: int = 0) -> StateSpaceModel:
    """Five-point advection-diffusion stencil on the unit square.

    Reflecting boundaries: mass that would leave the domain stays on the
    boundary cell, so interior rows sum to one and every row has at most
    five nonzeros.
    """
    _check_obs_fraction(obs_fraction)
    n_g = nx * ny
    ds = 1.0 / max(nx, ny)
    if alpha is None:
        alpha = 0.2 * ds * ds / dt
    bx, by = beta
    if bx is None:
        bx = 0.1 * ds / dt
    if by is None:
        by = 0.1 * ds / dt
    a = alpha * dt / (ds * ds)
    if a > 0.25 + 1e-12:
        raise ValueError(
            f"explicit 2D scheme unstable: alpha*dt/ds^2 = {a:.4f} > 1/4")
    cx = bx * dt / (2.0 * ds)
    cy = by * dt / (2.0 * ds)

    xs, ys = np.meshgrid((np.arange(nx) + 0.5) / nx,
                         (np.arange(ny) + 0.5) / ny, indexing="ij")
    grid = np.column_stack([xs.ravel(), ys.ravel()])

    if a == 0.0 and cx == 0.0 and cy == 0.0:
        evo = sp.identity(n_g, format="csr")
        scale = 1.0
    else:
        mat = sp.lil_matrix((n_g, n_g))
        def cell(i, j):
            return i * ny + j
        for i in range(nx):
            for j in range(ny):
                c = cell(i, j)
                mat[c, c] += 1.0 - 4.0 * a
                for di, dj, w in ((1, 0, a - cx), (-1, 0, a + cx),
                                  (0, 1, a - cy), (0, -1, a + cy)):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < nx and 0 <= jj < ny:
                        mat[c, cell(ii, jj)] += w
                    else:
                        mat[c, c] += w
        evo = mat.tocsr()
        scale = None

    if sigma_w2 > 0:
        kernel = MaternKernel(nu=nu, length_scale=length_scale,
                              variance=sigma_w2)
        q = sigma0 = KernelOracle(kernel, grid)
    else:
        q = sigma0 = ZeroOracle(n_g)
    n_t = int(round(obs_fraction * n_g))
    return StateSpaceModel(
        grid=grid,
        evolution=evo,
        innovation=q,
        observation=_RandomSubsetObservation(n_g, n_t, sigma_v2, seed),
        mu0=np.zeros(n_g),
        sigma0=sigma0,
        evolution_scale=scale,
        zero_innovation=sigma_w2 == 0.0,
    )


def _sampling_factor(oracle, n: int) -> np.ndarray:
    """Lower Cholesky of a densified covariance; zero matrices stay zero."""
    dense = densify(oracle, guard=DENSE_GUARD)
    if not np.any(dense):
        return np.zeros((n, n))
    return cholesky(dense + 1e-12 * np.eye(n), lower=True)


def simulate_truth(model: StateSpaceModel, T: int,
                   seed: int) -> SimulationResult:
    """Draw one trajectory and its observations, reproducible under seed."""
    n = model.n
    root = np.random.SeedSequence(seed)
    rng = np.random.default_rng(root)
    s0 = _sampling_factor(model.sigma0, n)
    qf = _sampling_factor(model.innovation, n)

    x = np.empty((T + 1, n))
    x[0] = model.mu0 + s0 @ rng.standard_normal(n)
    y: dict[int, np.ndarray] = {}
    for t in range(1, T + 1):
        x[t] = model.A(t) @ x[t - 1] + model.offset(t) \
            + qf @ rng.standard_normal(n)
        h, r_diag = model.observation(t)
        y[t] = h @ x[t] + np.sqrt(r_diag) * rng.standard_normal(h.shape[0])
    return SimulationResult(x=x, y=y)


def evolution_locality(model: StateSpaceModel, tree: PartitionTree) -> int:
    """Largest number of finest regions any row of A interacts with.

    This is the constant c of the sparse-evolution assumption; the forecast
    cost bound holds when it is small and independent of n.
    """
    a = model.evolution.tocsr()
    finest = tree.finest_of_row
    worst = 0
    for i in range(a.shape[0]):
        cols = a.indices[a.indptr[i]:a.indptr[i + 1]]
        if len(cols):
            worst = max(worst, len(np.unique(finest[tree.iperm[cols]])))
    return worst
