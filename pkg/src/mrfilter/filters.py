"""Exact Kalman filtering and the multi-resolution filter.

The Kalman filter keeps dense moments and serves as the ground-truth oracle
at desk scale.  The multi-resolution filter keeps the covariance as a
block-sparse factor: the forecast re-decomposes the propagated covariance
(or rescales the factor when the evolution is a declared multiple of the
identity with no innovation), and the update rotates the factor by the
inverse transpose Cholesky of the inner-product matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .blocksparse import (MultiResFactor, apply_inverse_transpose,
                          build_lambda, cholesky_and_invert, evolve_factor)
from .covariance import ForecastOracle, densify
from .mrd import mrd
from .partition import PartitionTree
from .ssm import DENSE_GUARD, StateSpaceModel

__all__ = [
    "FilterMoments",
    "UpdateStats",
    "KalmanFilter",
    "MultiResolutionFilter",
    "kf_step",
    "mrf_step",
    "mrf_forecast",
]


@dataclass
class UpdateStats:
    """Byproducts of one update step, enough to score the data likelihood."""

    n_t: int
    logdet_l: float
    logdet_r: float
    quad: float                 # residual' R^{-1} residual
    ytilde: np.ndarray          # B_{t|t}' H' R^{-1} residual


@dataclass
class FilterMoments:
    """Filtering moments at one time step; means are in grid order.

    Exactly one of ``factor`` (block-sparse, rows in the tree's hierarchical
    order) and ``cov`` (dense, grid order) is set.  Forecast-side quantities
    carry the same convention.
    """

    t: int
    mu: np.ndarray
    factor: MultiResFactor | None = None
    cov: np.ndarray | None = None
    mu_pred: np.ndarray | None = None
    factor_pred: MultiResFactor | None = None
    cov_pred: np.ndarray | None = None
    stats: UpdateStats | None = None

    def grid_variances(self, tree: PartitionTree | None = None) -> np.ndarray:
        """Marginal variances in grid order, O(nN) on the factor path."""
        if self.cov is not None:
            return np.diag(self.cov).copy()
        d_int = self.factor.row_sumsq()
        out = np.empty_like(d_int)
        out[self.factor.tree.perm] = d_int
        return out


# ---------------------------------------------------------------------------
# dense Kalman filter


class KalmanFilter:
    """Exact dense-moment filter, the scoring oracle for small grids."""

    def __init__(self, model: StateSpaceModel):
        if model.n > DENSE_GUARD:
            raise ValueError(
                f"dense filtering guarded at n <= {DENSE_GUARD}, got {model.n}")
        self.model = model
        self.a = model.evolution.toarray()
        self.q = densify(model.innovation, guard=DENSE_GUARD)
        self.loglik = 0.0

    def initialize(self) -> FilterMoments:
        sigma0 = densify(self.model.sigma0, guard=DENSE_GUARD)
        return FilterMoments(t=0, mu=self.model.mu0.copy(), cov=sigma0)

    def step(self, prev: FilterMoments, y: np.ndarray, t: int) -> FilterMoments:
        mu_pred = self.a @ prev.mu + self.model.offset(t)
        cov_pred = self.a @ prev.cov @ self.a.T + self.q
        cov_pred = 0.5 * (cov_pred + cov_pred.T)

        h, r_diag = self.model.observation(t)
        n_t = h.shape[0]
        if n_t == 0:
            return FilterMoments(t=t, mu=mu_pred, cov=cov_pred,
                                 mu_pred=mu_pred, cov_pred=cov_pred,
                                 stats=UpdateStats(0, 0.0, 0.0, 0.0,
                                                   np.zeros(0)))
        hd = h.toarray()
        s = hd @ cov_pred @ hd.T + np.diag(r_diag)
        try:
            s_fac = cho_factor(0.5 * (s + s.T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"innovation covariance not positive definite at t={t}") from exc
        resid = y - hd @ mu_pred
        gain = cho_solve(s_fac, hd @ cov_pred).T
        mu = mu_pred + gain @ resid
        cov = cov_pred - gain @ hd @ cov_pred
        cov = 0.5 * (cov + cov.T)

        logdet_s = 2.0 * float(np.sum(np.log(np.diag(s_fac[0]))))
        self.loglik += -0.5 * (logdet_s + resid @ cho_solve(s_fac, resid)
                               + n_t * np.log(2.0 * np.pi))
        return FilterMoments(t=t, mu=mu, cov=cov,
                             mu_pred=mu_pred, cov_pred=cov_pred)

    def run(self, ys: dict, T: int) -> list[FilterMoments]:
        out = [self.initialize()]
        for t in range(1, T + 1):
            out.append(self.step(out[-1], ys[t], t))
        return out


def kf_step(model: StateSpaceModel, prev: FilterMoments, y: np.ndarray,
            t: int) -> FilterMoments:
    return KalmanFilter(model).step(prev, y, t)


# ---------------------------------------------------------------------------
# multi-resolution filter


class MultiResolutionFilter:
    """Block-sparse filter on a fixed partition tree.

    ``timings`` accumulates (t, phase, milliseconds) tuples for the run log.
    """

    def __init__(self, model: StateSpaceModel, tree: PartitionTree,
                 validate_patterns: bool = False):
        self.model = model
        self.tree = tree
        self.validate_patterns = validate_patterns
        self.timings: list[tuple[int, str, float]] = []
        perm = tree.perm
        self._a_int = model.evolution.tocsr()[perm][:, perm].tocsr()
        self._h_cache: dict[int, tuple[sp.csr_matrix, np.ndarray]] = {}
        self._fast = (model.evolution_scale is not None
                      and model.zero_innovation)

    def _observation(self, t: int) -> tuple[sp.csr_matrix, np.ndarray]:
        hit = self._h_cache.get(t)
        if hit is None:
            h, r_diag = self.model.observation(t)
            hit = self._h_cache[t] = (h.tocsr()[:, self.tree.perm].tocsr(),
                                      np.asarray(r_diag, dtype=float))
        return hit

    def initialize(self) -> FilterMoments:
        factor = mrd(self.model.sigma0, self.tree)
        return FilterMoments(t=0, mu=self.model.mu0.copy(), factor=factor)

    def forecast(self, prev: FilterMoments, t: int) -> FilterMoments:
        mu_pred = self.model.evolution @ prev.mu + self.model.offset(t)
        if self._fast:
            factor_pred = prev.factor.scale(
                float(np.sqrt(self.model.evolution_scale)))
        else:
            bf = evolve_factor(self._a_int, prev.factor)
            oracle = ForecastOracle(bf, self.model.innovation,
                                    iperm=self.tree.iperm)
            factor_pred = mrd(oracle, self.tree)
        return FilterMoments(t=t, mu=mu_pred, factor=factor_pred,
                             mu_pred=mu_pred, factor_pred=factor_pred)

    def update(self, pred: FilterMoments, y: np.ndarray,
               t: int) -> FilterMoments:
        h_int, r_diag = self._observation(t)
        n_t = h_int.shape[0]
        if n_t == 0:
            pred.stats = UpdateStats(0, 0.0, 0.0, 0.0, np.zeros(0))
            return pred
        rinv = 1.0 / r_diag
        lam = build_lambda(pred.factor_pred, h_int, rinv)
        l_fac, l_inv = cholesky_and_invert(lam)
        factor = apply_inverse_transpose(pred.factor_pred, l_inv,
                                         validate=self.validate_patterns)

        resid = y - h_int @ pred.mu_pred[self.tree.perm]
        w_int = h_int.T @ (rinv * resid)
        ytilde = factor.rmatvec(w_int)
        delta_int = factor.matvec(ytilde)
        mu = pred.mu_pred + delta_int[self.tree.iperm]

        stats = UpdateStats(
            n_t=n_t,
            logdet_l=l_fac.logdet(),
            logdet_r=float(np.sum(np.log(r_diag))),
            quad=float(resid @ (rinv * resid)),
            ytilde=ytilde,
        )
        return FilterMoments(t=t, mu=mu, factor=factor,
                             mu_pred=pred.mu_pred,
                             factor_pred=pred.factor_pred, stats=stats)

    def step(self, prev: FilterMoments, y: np.ndarray, t: int) -> FilterMoments:
        tic = time.perf_counter()
        pred = self.forecast(prev, t)
        mid = time.perf_counter()
        out = self.update(pred, y, t)
        toc = time.perf_counter()
        self.timings.append((t, "forecast", 1e3 * (mid - tic)))
        self.timings.append((t, "update", 1e3 * (toc - mid)))
        return out

    def forecast_only(self, moments: FilterMoments, k: int) -> FilterMoments:
        """Propagate k steps ahead without conditioning on data."""
        if k < 1:
            raise ValueError(f"forecast horizon must be >= 1, got {k}")
        cur = moments
        for j in range(1, k + 1):
            cur = self.forecast(cur, moments.t + j)
        return cur

    def run(self, ys: dict, T: int) -> list[FilterMoments]:
        out = [self.initialize()]
        for t in range(1, T + 1):
            out.append(self.step(out[-1], ys[t], t))
        return out


def mrf_step(model: StateSpaceModel, prev: FilterMoments, y: np.ndarray,
             tree: PartitionTree, t: int) -> FilterMoments:
    return MultiResolutionFilter(model, tree).step(prev, y, t)


def mrf_forecast(moments: FilterMoments, model: StateSpaceModel,
                 tree: PartitionTree, k: int) -> FilterMoments:
    return MultiResolutionFilter(model, tree).forecast_only(moments, k)
