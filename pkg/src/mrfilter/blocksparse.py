"""Block-sparse multi-resolution factors and the update-step linear algebra.

The factor B stores one dense block per region; its columns are grouped by
resolution (finest first) and are block-diagonal within each group.  The
inner-product matrix Lambda = I + B'H'R^{-1}HB is held frontally: for each
region, the panel of its own columns restricted to the structurally nonzero
rows (the region's columns plus all ancestor columns).  The Cholesky factor
and its inverse are computed inside that fixed pattern, so the preservation
theorems hold by construction rather than by thresholding.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .partition import PartitionTree

__all__ = [
    "MultiResFactor",
    "InnerProductMatrix",
    "TriangularFactor",
    "AssumptionViolationError",
    "PatternViolationError",
    "PivotError",
    "evolve_factor",
    "build_lambda",
    "cholesky_and_invert",
    "apply_inverse_transpose",
]

log = logging.getLogger(__name__)

JITTER = 1e-10
OUT_OF_PATTERN_TOL = 1e-10


def frontal_rows(tree: PartitionTree, path) -> np.ndarray:
    """Structurally nonzero rows of a region's columns in Lambda's lower part.

    These are the region's own columns followed by all ancestor columns; the
    result is sorted because coarser column groups sit further right.
    """
    path = tuple(path)
    parts = [np.arange(tree.regions[path].col_start,
                       tree.regions[path].col_stop)]
    for anc in reversed(tree.ancestors(path)):
        reg = tree.regions[anc]
        parts.append(np.arange(reg.col_start, reg.col_stop))
    return np.concatenate(parts)


def _tail_offset(tree: PartitionTree, dpath, path) -> int:
    """Offset of region ``path``'s column segment in ``dpath``'s frontal rows."""
    return tree.regions[dpath].n_knots + sum(
        tree.regions[a].n_knots
        for a in tree.ancestors(dpath)[len(path) + 1:])


class AssumptionViolationError(ValueError):
    """Observation operator or noise couples distinct finest regions."""


class PatternViolationError(RuntimeError):
    """A structurally impossible nonzero appeared; invariants are broken."""


class PivotError(np.linalg.LinAlgError):
    """Non-positive Cholesky pivot that jitter could not repair."""


class MultiResFactor:
    """The factor B as per-region dense blocks on a partition tree."""

    def __init__(self, tree: PartitionTree, blocks: dict[tuple[int, ...], np.ndarray]):
        self.tree = tree
        self.blocks = blocks
        self.ncols = tree.ncols
        self._csr = None

    def block(self, path) -> np.ndarray:
        return self.blocks[tuple(path)]

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            rows, cols, vals = [], [], []
            for path, blk in self.blocks.items():
                if blk.size == 0:
                    continue
                reg = self.tree.regions[path]
                r = np.arange(reg.row_start, reg.row_stop)
                c = np.arange(reg.col_start, reg.col_stop)
                rr, cc = np.meshgrid(r, c, indexing="ij")
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(blk.ravel())
            if rows:
                coo = sp.coo_matrix(
                    (np.concatenate(vals),
                     (np.concatenate(rows), np.concatenate(cols))),
                    shape=(self.tree.n, self.ncols))
            else:
                coo = sp.coo_matrix((self.tree.n, self.ncols))
            self._csr = coo.tocsr()
        return self._csr

    def dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def cov_dense(self) -> np.ndarray:
        """Dense BB' in internal row order."""
        b = self.to_csr()
        return (b @ b.T).toarray()

    def scale(self, c: float) -> "MultiResFactor":
        return MultiResFactor(
            self.tree, {p: c * blk for p, blk in self.blocks.items()})

    def row_nnz(self) -> np.ndarray:
        """Stored entries per row (structural, independent of values)."""
        out = np.zeros(self.tree.n, dtype=np.int64)
        for path, blk in self.blocks.items():
            reg = self.tree.regions[path]
            out[reg.row_start:reg.row_stop] += blk.shape[1]
        return out

    def row_sumsq(self) -> np.ndarray:
        """diag(BB') computed blockwise in O(nN)."""
        out = np.zeros(self.tree.n)
        for path, blk in self.blocks.items():
            if blk.size == 0:
                continue
            reg = self.tree.regions[path]
            out[reg.row_start:reg.row_stop] += np.einsum("ij,ij->i", blk, blk)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr() @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr().T @ x

    def same_pattern_as(self, other: "MultiResFactor") -> bool:
        return (self.tree is other.tree
                and self.blocks.keys() == other.blocks.keys()
                and all(self.blocks[p].shape == other.blocks[p].shape
                        for p in self.blocks))


def evolve_factor(a: sp.spmatrix, factor: MultiResFactor,
                  row_nnz_budget: int | None = None) -> sp.csr_matrix:
    """Apply an evolution matrix to the factor, returning a row-sparse result.

    The multi-resolution pattern is not claimed for the product; it is a
    generic CSR matrix.  A row of ``a`` exceeding the declared nonzero budget
    only voids the complexity bound, so it warns instead of failing.
    """
    a = sp.csr_matrix(a)
    n = factor.tree.n
    if a.shape != (n, n):
        raise ValueError(f"evolution matrix shape {a.shape} != ({n}, {n})")
    if row_nnz_budget is not None:
        per_row = np.diff(a.indptr)
        if np.any(per_row > row_nnz_budget):
            warnings.warn(
                f"evolution matrix has rows with up to {per_row.max()} "
                f"nonzeros, above the declared budget {row_nnz_budget}; "
                "results are unaffected but the cost bound is not",
                stacklevel=2)
    return (a @ factor.to_csr()).tocsr()


# ---------------------------------------------------------------------------
# inner-product matrix


class InnerProductMatrix:
    """Lambda = I + B'H'R^{-1}HB stored frontally within its proven pattern.

    ``panels[path]`` holds the rows ``frontal_rows(path)`` of the columns
    owned by that region; frontal rows are the region's own columns followed
    by every ancestor's columns, in increasing column order.
    """

    def __init__(self, tree: PartitionTree,
                 panels: dict[tuple[int, ...], np.ndarray]):
        self.tree = tree
        self.panels = panels
        self.ncols = tree.ncols

    def frontal_rows(self, path) -> np.ndarray:
        return frontal_rows(self.tree, path)

    def column_order(self):
        """Region paths in increasing column order (finest level first)."""
        for level in range(self.tree.M, -1, -1):
            for path in self.tree.levels[level]:
                if self.tree.regions[path].n_knots:
                    yield path

    def dense(self) -> np.ndarray:
        out = np.zeros((self.ncols, self.ncols))
        for path in self.column_order():
            reg = self.tree.regions[path]
            rows = self.frontal_rows(path)
            cols = np.arange(reg.col_start, reg.col_stop)
            out[np.ix_(rows, cols)] = self.panels[path]
            out[np.ix_(cols, rows)] = self.panels[path].T
        return out

    def lower_pattern_nnz(self) -> int:
        nnz = 0
        for path in self.column_order():
            k = self.tree.regions[path].n_knots
            h = self.panels[path].shape[0]
            nnz += k * h - (k * (k - 1)) // 2
        return nnz


def _obs_operator(tree: PartitionTree, h: sp.spmatrix,
                  rinv: np.ndarray | sp.spmatrix) -> sp.csr_matrix:
    """Validate the block-locality assumption and form H'R^{-1}H."""
    h = sp.csr_matrix(h)
    n_t = h.shape[0]
    if h.shape[1] != tree.n:
        raise ValueError(f"H has {h.shape[1]} columns, expected {tree.n}")

    finest = tree.finest_of_row
    row_region = np.full(n_t, -1, dtype=np.int64)
    for i in range(n_t):
        cols = h.indices[h.indptr[i]:h.indptr[i + 1]]
        if len(cols) == 0:
            continue
        regions = np.unique(finest[cols])
        if len(regions) > 1:
            raise AssumptionViolationError(
                f"observation row {i} couples finest regions "
                f"{regions.tolist()}")
        row_region[i] = regions[0]

    if sp.issparse(rinv):
        rinv = sp.csr_matrix(rinv)
        if rinv.shape != (n_t, n_t):
            raise ValueError("R^{-1} dimension mismatch")
        coo = rinv.tocoo()
        bad = (row_region[coo.row] != row_region[coo.col]) & (coo.data != 0)
        if np.any(bad):
            i = int(coo.row[np.argmax(bad)])
            raise AssumptionViolationError(
                f"noise covariance row {i} couples two finest regions")
        rmat = rinv
    else:
        rinv = np.asarray(rinv, dtype=float)
        if rinv.shape != (n_t,):
            raise ValueError("diagonal R^{-1} must have length n_t")
        rmat = sp.diags(rinv)
    return (h.T @ rmat @ h).tocsr()


def build_lambda(factor: MultiResFactor, h: sp.spmatrix,
                 rinv: np.ndarray | sp.spmatrix) -> InnerProductMatrix:
    """Assemble Lambda = I + B'H'R^{-1}HB in its frontal block layout."""
    tree = factor.tree
    g = _obs_operator(tree, h, rinv)
    b = factor.to_csr()
    lam = (b.T @ (g @ b)).tocsc()
    lam.sum_duplicates()

    ipm = InnerProductMatrix(tree, {})
    panels = {}
    for path in ipm.column_order():
        reg = tree.regions[path]
        rows = frontal_rows(tree, path)
        k = reg.n_knots
        panel = np.zeros((len(rows), k))
        panel[:k, :k] = np.eye(k)
        for j_local, j in enumerate(range(reg.col_start, reg.col_stop)):
            lo, hi = lam.indptr[j], lam.indptr[j + 1]
            ridx = lam.indices[lo:hi]
            vals = lam.data[lo:hi]
            pos = np.searchsorted(rows, ridx)
            pos_ok = (pos < len(rows))
            hit = np.zeros(len(ridx), dtype=bool)
            hit[pos_ok] = rows[pos[pos_ok]] == ridx[pos_ok]
            # Rows outside the frontal set must belong to descendants (the
            # mirrored upper part); anything else breaks the block theorem.
            if not np.all(hit):
                for r in ridx[~hit]:
                    other = tree.col_region[r]
                    if other[:reg.level] != path or len(other) <= reg.level:
                        raise PatternViolationError(
                            f"entry ({r}, {j}) falls outside the proven "
                            f"inner-product pattern")
            panel[pos[hit], j_local] += vals[hit]
        # Mirror the diagonal block to enforce symmetry exactly.
        panel[:k] = 0.5 * (panel[:k] + panel[:k].T)
        panels[path] = panel
    return InnerProductMatrix(tree, panels)


# ---------------------------------------------------------------------------
# Cholesky within the pattern


class TriangularFactor:
    """Lower-triangular factor (or its inverse) in frontal panel storage."""

    def __init__(self, tree: PartitionTree,
                 panels: dict[tuple[int, ...], np.ndarray]):
        self.tree = tree
        self.panels = panels
        self.ncols = tree.ncols

    def frontal_rows(self, path) -> np.ndarray:
        return frontal_rows(self.tree, path)

    def _column_paths(self):
        for level in range(self.tree.M, -1, -1):
            for path in self.tree.levels[level]:
                if self.tree.regions[path].n_knots:
                    yield path

    def to_csc(self) -> sp.csc_matrix:
        rows, cols, vals = [], [], []
        for path in self._column_paths():
            reg = self.tree.regions[path]
            frows = frontal_rows(self.tree, path)
            panel = self.panels[path]
            for j_local in range(reg.n_knots):
                keep = np.arange(j_local, len(frows))
                rows.append(frows[keep])
                cols.append(np.full(len(keep), reg.col_start + j_local))
                vals.append(panel[keep, j_local])
        if not rows:
            return sp.csc_matrix((self.ncols, self.ncols))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ncols, self.ncols)).tocsc()

    def dense(self) -> np.ndarray:
        return self.to_csc().toarray()

    def logdet(self) -> float:
        total = 0.0
        for path in self._column_paths():
            panel = self.panels[path]
            total += float(np.sum(np.log(np.diag(panel))))
        return total

    def column_nnz(self) -> np.ndarray:
        out = np.zeros(self.ncols, dtype=np.int64)
        for path in self._column_paths():
            reg = self.tree.regions[path]
            h = self.panels[path].shape[0]
            for j_local in range(reg.n_knots):
                out[reg.col_start + j_local] = h - j_local
        return out


def _front_chol(block: np.ndarray, path, attempts: int = 2) -> np.ndarray:
    maxdiag = float(np.max(np.diag(block))) if block.size else 1.0
    try:
        return np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        pass
    log.warning("Cholesky jitter retry in update front at region %s", path)
    try:
        return np.linalg.cholesky(block + JITTER * np.eye(block.shape[0]))
    except np.linalg.LinAlgError as exc:
        piv = int(np.argmin(np.diag(block)))
        raise PivotError(
            f"non-positive pivot near column {piv} of region {path} "
            f"(max diagonal {maxdiag:.3e})") from exc


def cholesky_and_invert(lam: InnerProductMatrix):
    """Pattern-restricted Cholesky of Lambda and triangular inversion.

    Returns ``(L, Linv)`` with L lower triangular, L L' = Lambda, and both
    factors confined to the lower triangle of Lambda's structural pattern.
    """
    tree = lam.tree
    lpanels: dict[tuple[int, ...], np.ndarray] = {}
    ipanels: dict[tuple[int, ...], np.ndarray] = {}
    # The frontal rows of a descendant d are (cols(d), ..., cols(root)); the
    # tail starting at q's column segment equals q's own frontal rows, so
    # left-looking updates are pure slices.
    for path in lam.column_order():
        reg = tree.regions[path]
        k = reg.n_knots
        panel = lam.panels[path].copy()
        for dpath in tree.descendants(path):
            dreg = tree.regions[dpath]
            if dreg.n_knots == 0 or dpath not in lpanels:
                continue
            u = lpanels[dpath][_tail_offset(tree, dpath, path):]
            panel -= u @ u[:k].T
        c = _front_chol(panel[:k], path)
        below = solve_triangular(c, panel[k:].T, lower=True).T if panel.shape[0] > k \
            else np.zeros((0, k))
        lpanels[path] = np.vstack([c, below])

    # Inverse columns need every ancestor's L panel, so they come in a second
    # pass: solve the frontal lower-triangular system whose column blocks are
    # this region's panel followed by its ancestors' panels.
    for path in lam.column_order():
        reg = tree.regions[path]
        k = reg.n_knots
        lp = lpanels[path]
        frows_len = lp.shape[0]
        t = np.zeros((frows_len, frows_len))
        t[:, :k] = lp
        col = k
        for anc in reversed(tree.ancestors(path)):
            ka = tree.regions[anc].n_knots
            if ka == 0:
                continue
            t[col:, col:col + ka] = lpanels[anc]
            col += ka
        x = solve_triangular(t, np.eye(frows_len, k), lower=True)
        ipanels[path] = x

    return TriangularFactor(tree, lpanels), TriangularFactor(tree, ipanels)


def apply_inverse_transpose(factor: MultiResFactor, linv: TriangularFactor,
                            validate: bool = False) -> MultiResFactor:
    """Compute B (L^{-1})' inside the factor's own block pattern.

    The product provably carries no mass outside the pattern; with
    ``validate=True`` the structural result is checked against the full
    sparse product and any out-of-pattern value above tolerance is a hard
    error.
    """
    tree = factor.tree
    if linv.tree is not tree:
        raise ValueError("factor and triangular factor use different trees")
    new_blocks: dict[tuple[int, ...], np.ndarray] = {}
    for path, blk in factor.blocks.items():
        reg = tree.regions[path]
        k = reg.n_knots
        out = np.zeros((reg.n_indices, k))
        if k:
            for dpath in [path, *tree.descendants(path)]:
                dreg = tree.regions[dpath]
                if dreg.n_knots == 0 or dpath not in linv.panels:
                    continue
                seg = 0 if dpath == path else _tail_offset(tree, dpath, path)
                piece = linv.panels[dpath][seg:seg + k]  # (k, kd)
                bd = factor.blocks[dpath]
                r0 = dreg.row_start - reg.row_start
                out[r0:r0 + dreg.n_indices] += bd @ piece.T
        new_blocks[path] = out
    result = MultiResFactor(tree, new_blocks)
    if validate:
        full = factor.to_csr() @ linv.to_csc().T
        resid = full - result.to_csr()
        if resid.nnz and np.max(np.abs(resid.data)) > OUT_OF_PATTERN_TOL:
            raise PatternViolationError(
                "update produced out-of-pattern fill of magnitude "
                f"{np.max(np.abs(resid.data)):.3e}")
    return result
