"""Multi-resolution decomposition of a covariance accessed entrywise.

Produces the block-sparse factor B with BB' approximating the input
covariance.  The per-region residual panels are computed coarse-to-fine; a
region's panel is corrected against every ancestor using the ancestor's
stored panel, so each covariance entry is requested at most once.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .blocksparse import MultiResFactor
from .covariance import CountingOracle, densify
from .partition import PartitionTree

__all__ = ["mrd", "mrd_error_report", "NotPositiveDefiniteError"]

log = logging.getLogger(__name__)

JITTER = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Knot residual covariance failed Cholesky even after jitter."""


def _chol_with_jitter(mat: np.ndarray, context: str) -> np.ndarray:
    """Lower Cholesky with a single jitter retry on near-zero pivots."""
    try:
        return cholesky(mat, lower=True)
    except np.linalg.LinAlgError:
        pass
    log.warning("Cholesky jitter retry in %s", context)
    try:
        return cholesky(mat + JITTER * np.eye(mat.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"residual covariance not positive definite in {context}") from exc


def mrd(sigma, tree: PartitionTree) -> MultiResFactor:
    """Decompose ``sigma`` (a covariance oracle) on the given tree."""
    if sigma.n != tree.n:
        raise ValueError(
            f"oracle dimension {sigma.n} does not match grid size {tree.n}")

    panels: dict[tuple[int, ...], np.ndarray] = {}
    vchol: dict[tuple[int, ...], np.ndarray] = {}
    blocks: dict[tuple[int, ...], np.ndarray] = {}

    for level in range(tree.M + 1):
        for path in tree.levels[level]:
            reg = tree.regions[path]
            if reg.n_knots == 0:
                blocks[path] = np.zeros((reg.n_indices, 0))
                continue
            w = sigma.block(reg.indices, reg.knots)
            for anc_path in tree.ancestors(path):
                anc = tree.regions[anc_path]
                if anc.n_knots == 0:
                    continue
                pa = panels[anc_path]
                rows = slice(reg.row_start - anc.row_start,
                             reg.row_stop - anc.row_start)
                krows = reg.knot_local + (reg.row_start - anc.row_start)
                w = w - pa[rows] @ cho_solve(
                    (vchol[anc_path], True), pa[krows].T)
            if level < tree.M:
                panels[path] = w
            v = w[reg.knot_local]
            v = 0.5 * (v + v.T)
            c = _chol_with_jitter(v, f"mrd at region {path}")
            if level < tree.M:
                vchol[path] = c
            blocks[path] = solve_triangular(c, w.T, lower=True).T

    return MultiResFactor(tree, blocks)


def mrd_error_report(sigma, tree: PartitionTree, guard: int = 4000) -> dict:
    """Dense-oracle error summary of the decomposition BB' vs sigma."""
    counting = CountingOracle(sigma)
    factor = mrd(counting, tree)
    dense_sigma = tree.reorder(tree.reorder(densify(sigma, guard=guard)).T).T
    approx = factor.cov_dense()
    diff = approx - dense_sigma
    fro = float(np.linalg.norm(dense_sigma))
    return {
        "max_abs_error": float(np.max(np.abs(diff))),
        "frobenius_relative_error": float(np.linalg.norm(diff) / fro) if fro else 0.0,
        "oracle_entries_requested": counting.entries,
        "n": tree.n,
        "ncols": factor.ncols,
    }
