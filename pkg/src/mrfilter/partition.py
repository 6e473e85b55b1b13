"""Recursive domain partitioning, knot selection and hierarchical ordering.

The partition tree is the combinatorial backbone of the whole library: every
block-sparse structure downstream (factor blocks, inner-product patterns,
Cholesky fronts) is expressed in terms of the per-region index ranges and
knot sets built here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PartitionConfig",
    "Region",
    "PartitionTree",
    "InfeasiblePartitionError",
    "build_partition",
    "degenerate_config",
]


class InfeasiblePartitionError(ValueError):
    """Raised when a region cannot supply the requested number of knots."""


def _path_str(path: tuple[int, ...]) -> str:
    return "root" if not path else "root." + ".".join(str(j) for j in path)


@dataclass(frozen=True)
class PartitionConfig:
    """Resolution count, branching factors and knot counts per level.

    ``J`` may be a scalar (same branching at every level) or a sequence of
    length ``M`` giving the number of children created at levels ``1..M``.
    ``r`` may be a scalar or a sequence of length ``M + 1`` giving the knot
    count per region at levels ``0..M``.  At the finest level the knot count
    is a target only: by default every remaining index of a region becomes a
    knot there, so that the knot sets partition the grid.

    ``boundary_knots`` places ``J - 1`` knots per coarse region, one next to
    each internal child boundary; ``r`` is ignored below the finest level in
    that mode.  ``truncate_finest`` keeps at most ``r_M`` knots at the finest
    level, producing a genuinely low-rank factor (the knot-partition property
    is intentionally given up).
    """

    M: int
    J: int | tuple[int, ...] = 2
    r: int | tuple[int, ...] = 2
    boundary_knots: bool = False
    truncate_finest: bool = False

    def __post_init__(self) -> None:
        if self.M < 0:
            raise ValueError("M must be >= 0")
        object.__setattr__(self, "J", self._expand(self.J, self.M, "J"))
        object.__setattr__(self, "r", self._expand(self.r, self.M + 1, "r"))
        if any(j < 2 for j in self.J):
            raise ValueError("every J_m must be >= 2")
        if any(rm < 1 for rm in self.r):
            raise ValueError("every r_m must be >= 1")

    @staticmethod
    def _expand(value, length: int, name: str) -> tuple[int, ...]:
        if np.isscalar(value):
            return tuple(int(value) for _ in range(length))
        out = tuple(int(v) for v in value)
        if len(out) != length:
            raise ValueError(f"{name} must have length {length}, got {len(out)}")
        return out

    def knots_at(self, level: int) -> int:
        return self.r[level]


def degenerate_config(n: int, rank: int) -> PartitionConfig:
    """Tree with ``rank`` knots at resolution 0 and singleton finest regions.

    This is the low-rank-plus-diagonal special case: one resolution of global
    knots, after which every grid point sits in its own partition.
    """
    return PartitionConfig(M=1, J=(n,), r=(rank, 1))


@dataclass
class Region:
    path: tuple[int, ...]
    level: int
    indices: np.ndarray  # original grid ids, internal (hierarchical) order
    knots: np.ndarray  # original grid ids, subset of indices
    box: np.ndarray  # (d, 2) bounding box
    children: list[tuple[int, ...]] = field(default_factory=list)
    # layout, filled in by PartitionTree
    row_start: int = -1
    row_stop: int = -1
    col_start: int = -1
    col_stop: int = -1
    knot_local: np.ndarray | None = None  # positions of knots within indices

    @property
    def n_indices(self) -> int:
        return len(self.indices)

    @property
    def n_knots(self) -> int:
        return len(self.knots)

    @property
    def parent(self) -> tuple[int, ...] | None:
        return self.path[:-1] if self.path else None


class PartitionTree:
    """Immutable recursive partition with hierarchical state ordering.

    ``perm`` maps internal positions to original grid indices: the vector in
    internal order is ``v[perm]``.  ``iperm`` is its inverse.  Factor columns
    are laid out per resolution from finest (level ``M``) to coarsest (level
    0); within a level, regions appear in lexicographic path order.
    """

    def __init__(self, grid: np.ndarray, config: PartitionConfig,
                 regions: dict[tuple[int, ...], Region]):
        self.grid = grid
        self.config = config
        self.regions = regions
        self.n = len(grid)
        self.M = config.M
        self.levels: list[list[tuple[int, ...]]] = [
            sorted(p for p, reg in regions.items() if reg.level == m)
            for m in range(self.M + 1)
        ]
        self._finalize_layout()

    def _finalize_layout(self) -> None:
        # Hierarchical order: concatenation of finest-region index sets in
        # lexicographic path order; within a region the original ascending
        # order is kept.
        perm = np.concatenate([self.regions[p].indices for p in self.levels[self.M]])
        if len(perm) != self.n:
            raise AssertionError("finest regions do not cover the grid")
        self.perm = perm
        self.iperm = np.empty(self.n, dtype=np.int64)
        self.iperm[perm] = np.arange(self.n)

        # Row ranges (contiguous by construction) and knot layout.
        for level in range(self.M, -1, -1):
            for path in self.levels[level]:
                reg = self.regions[path]
                rows = self.iperm[reg.indices]
                order = np.argsort(rows, kind="stable")
                reg.indices = reg.indices[order]
                rows = rows[order]
                reg.row_start = int(rows[0]) if len(rows) else 0
                reg.row_stop = reg.row_start + len(rows)
                if len(rows) and not np.array_equal(
                        rows, np.arange(reg.row_start, reg.row_stop)):
                    raise AssertionError(f"region {_path_str(path)} not contiguous")
                if reg.n_knots:
                    kr = np.sort(self.iperm[reg.knots])
                    reg.knots = self.perm[kr]
                    reg.knot_local = kr - reg.row_start
                else:
                    reg.knot_local = np.empty(0, dtype=np.int64)

        # Column layout: levels M..0, lexicographic regions within a level.
        offset = 0
        for level in range(self.M, -1, -1):
            for path in self.levels[level]:
                reg = self.regions[path]
                reg.col_start = offset
                offset += reg.n_knots
                reg.col_stop = offset
        self.ncols = offset

        # Per internal row: finest region ordinal; per column: owning region.
        self.finest_paths = list(self.levels[self.M])
        self.finest_of_row = np.empty(self.n, dtype=np.int64)
        for k, path in enumerate(self.finest_paths):
            reg = self.regions[path]
            self.finest_of_row[reg.row_start:reg.row_stop] = k
        self.col_region = np.empty(self.ncols, dtype=object)
        for reg in self.regions.values():
            for c in range(reg.col_start, reg.col_stop):
                self.col_region[c] = reg.path
        self._desc_cache: dict[tuple[int, ...], list[tuple[int, ...]]] = {}

    # -- navigation ------------------------------------------------------

    def region(self, path: tuple[int, ...]) -> Region:
        return self.regions[tuple(path)]

    def ancestors(self, path: tuple[int, ...]) -> list[tuple[int, ...]]:
        """Proper ancestors of ``path``, from the root down to its parent."""
        return [tuple(path[:k]) for k in range(len(path))]

    def descendants(self, path: tuple[int, ...]) -> list[tuple[int, ...]]:
        path = tuple(path)
        cached = self._desc_cache.get(path)
        if cached is None:
            out = []
            stack = list(self.regions[path].children)
            while stack:
                p = stack.pop()
                out.append(p)
                stack.extend(self.regions[p].children)
            cached = self._desc_cache[path] = sorted(out)
        return cached

    # -- reordering ------------------------------------------------------

    def reorder(self, v: np.ndarray) -> np.ndarray:
        """Permute rows of a vector or matrix into hierarchical order."""
        v = np.asarray(v)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: expected {self.n}, got {v.shape[0]}")
        return v[self.perm]

    def inverse_reorder(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: expected {self.n}, got {v.shape[0]}")
        return v[self.iperm]

    # -- canonical sparsity pattern ---------------------------------------

    def row_pattern_columns(self, path: tuple[int, ...]) -> np.ndarray:
        """Columns structurally nonzero for rows of finest region ``path``."""
        cols = []
        for p in [*self.ancestors(path), path]:
            reg = self.regions[p]
            cols.append(np.arange(reg.col_start, reg.col_stop))
        return np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)

    def row_nnz_expected(self) -> np.ndarray:
        """Structural nonzeros per row: sum of ancestor-or-self knot counts."""
        out = np.empty(self.n, dtype=np.int64)
        for path in self.finest_paths:
            reg = self.regions[path]
            nnz = sum(self.regions[p].n_knots
                      for p in [*self.ancestors(path), path])
            out[reg.row_start:reg.row_stop] = nnz
        return out

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        """Assert the structural invariants; cheap, intended for tests."""
        total = 0
        seen = np.zeros(self.n, dtype=bool)
        for reg in self.regions.values():
            total += reg.n_knots
            if np.any(seen[reg.knots]):
                raise AssertionError("knot sets are not disjoint")
            seen[reg.knots] = True
            if not np.all(np.isin(reg.knots, reg.indices)):
                raise AssertionError("knots escape their region")
            if reg.children:
                child_idx = np.concatenate(
                    [self.regions[c].indices for c in reg.children])
                if not np.array_equal(np.sort(child_idx), np.sort(reg.indices)):
                    raise AssertionError("children do not partition their parent")
        if not self.config.truncate_finest and total != self.n:
            raise AssertionError("knots do not partition the grid")

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "M": self.M,
            "J": list(self.config.J),
            "r": list(self.config.r),
            "boundary_knots": self.config.boundary_knots,
            "truncate_finest": self.config.truncate_finest,
            "perm": self.perm.tolist(),
            "regions": [
                {
                    "path": list(reg.path),
                    "level": reg.level,
                    "indices": reg.indices.tolist(),
                    "knots": reg.knots.tolist(),
                    "box": reg.box.tolist(),
                }
                for path, reg in sorted(self.regions.items(),
                                        key=lambda kv: (len(kv[0]), kv[0]))
            ],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# construction


def _split_region(coords: np.ndarray, idx: np.ndarray, box: np.ndarray,
                  n_children: int, remaining: np.ndarray | None = None):
    """J-section of ``idx`` along the longest box dimension.

    Split positions are quantiles of ``remaining`` (the points not yet
    consumed as knots) so that descendants inherit equal shares of the
    unused points; all of ``idx`` is then assigned by position.  When the
    remaining set is too small to seed every child the plain quantiles of
    ``idx`` are used instead.
    """
    dim = int(np.argmax(box[:, 1] - box[:, 0]))
    basis = idx if remaining is None or len(remaining) < n_children \
        else remaining
    order = np.argsort(coords[basis, dim], kind="stable")
    ref_chunks = np.array_split(basis[order], n_children)
    boundaries = []
    for j in range(n_children - 1):
        lo = coords[ref_chunks[j][-1], dim] if len(ref_chunks[j]) \
            else box[dim, 0]
        hi = coords[ref_chunks[j + 1][0], dim] if len(ref_chunks[j + 1]) \
            else box[dim, 1]
        boundaries.append(0.5 * (lo + hi))
    if basis is idx:
        chunks = ref_chunks
    else:
        bins = np.searchsorted(np.asarray(boundaries), coords[idx, dim],
                               side="left")
        chunks = [np.sort(idx[bins == j]) for j in range(n_children)]
    child_boxes = []
    edges = [box[dim, 0], *boundaries, box[dim, 1]]
    for j in range(n_children):
        b = box.copy()
        b[dim, 0], b[dim, 1] = edges[j], edges[j + 1]
        child_boxes.append(b)
    return dim, chunks, boundaries, child_boxes


def _template_points(box: np.ndarray, r: int) -> np.ndarray:
    """Near-equispaced lattice of ``r`` template points over the box."""
    d = box.shape[0]
    if d == 1:
        lo, hi = box[0]
        return (lo + (hi - lo) * (np.arange(r) + 0.5) / r)[:, None]
    lengths = np.maximum(box[:, 1] - box[:, 0], 1e-300)
    counts = np.ones(d, dtype=int)
    while np.prod(counts) < r:
        # grow the dimension with the current largest cell size
        cell = lengths / counts
        counts[int(np.argmax(cell))] += 1
    axes = [box[k, 0] + lengths[k] * (np.arange(counts[k]) + 0.5) / counts[k]
            for k in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    center = box.mean(axis=1)
    order = np.lexsort(tuple(mesh[:, k] for k in range(d - 1, -1, -1)))
    mesh = mesh[order]
    dist = np.linalg.norm(mesh - center, axis=1)
    keep = np.argsort(dist, kind="stable")[:r]
    return mesh[np.sort(keep)]


def _nearest_remaining(coords: np.ndarray, candidates: np.ndarray,
                       targets: np.ndarray) -> np.ndarray:
    """Greedy match: for each target point the closest unused candidate.

    Ties are broken by lowest original index (candidates are sorted).
    """
    chosen = []
    available = np.ones(len(candidates), dtype=bool)
    pts = coords[candidates]
    for tgt in targets:
        dist = np.linalg.norm(pts - tgt, axis=1)
        dist[~available] = np.inf
        k = int(np.argmin(dist))  # argmin takes the first minimum: lowest id
        chosen.append(candidates[k])
        available[k] = False
    return np.array(sorted(chosen), dtype=np.int64)


def build_partition(grid: np.ndarray, config: PartitionConfig) -> PartitionTree:
    """Build the recursive partition and knot hierarchy for ``grid``.

    The grid is an ``(n, d)`` array of distinct points (a 1D sequence is
    accepted and promoted).  Construction is deterministic.
    """
    coords = np.asarray(grid, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    n, d = coords.shape
    if len(np.unique(coords, axis=0)) != n:
        raise ValueError("grid points must be distinct")

    box0 = np.stack([coords.min(axis=0), coords.max(axis=0)], axis=1)
    used = np.zeros(n, dtype=bool)
    regions: dict[tuple[int, ...], Region] = {}

    def visit(path: tuple[int, ...], idx: np.ndarray, box: np.ndarray) -> None:
        level = len(path)
        if len(idx) == 0:
            raise InfeasiblePartitionError(
                f"region {_path_str(path)} contains no grid points")
        remaining = idx[~used[idx]]
        if level == config.M:
            if config.truncate_finest and len(remaining) > config.r[level]:
                knots = _nearest_remaining(
                    coords, remaining, _template_points(box, config.r[level]))
            else:
                knots = remaining
            regions[path] = Region(path, level, idx.copy(), knots, box)
            return

        n_children = config.J[level]
        if len(idx) < n_children:
            raise InfeasiblePartitionError(
                f"region {_path_str(path)} has {len(idx)} points, "
                f"cannot split into {n_children} children")

        if config.boundary_knots:
            dim, chunks, boundaries, child_boxes = _split_region(
                coords, idx, box, n_children, remaining)
            targets = np.tile(box.mean(axis=1), (len(boundaries), 1))
            targets[:, dim] = boundaries
            want = len(boundaries)
            if len(remaining) < want:
                raise InfeasiblePartitionError(
                    f"region {_path_str(path)} has only {len(remaining)} "
                    f"unused points but needs {want} knots at level {level}")
            knots = _nearest_remaining(coords, remaining, targets)
            used[knots] = True
        else:
            targets = _template_points(box, config.r[level])
            want = config.r[level]
            if len(remaining) < want:
                raise InfeasiblePartitionError(
                    f"region {_path_str(path)} has only {len(remaining)} "
                    f"unused points but needs {want} knots at level {level}")
            knots = _nearest_remaining(coords, remaining, targets)
            used[knots] = True
            # split after consuming this region's knots so every child
            # inherits an equal share of the still-unused points
            dim, chunks, boundaries, child_boxes = _split_region(
                coords, idx, box, n_children, idx[~used[idx]])
        reg = Region(path, level, idx.copy(), knots, box)
        regions[path] = reg
        for j in range(n_children):
            child = path + (j + 1,)
            reg.children.append(child)
            visit(child, np.sort(chunks[j]), child_boxes[j])

    visit((), np.arange(n, dtype=np.int64), box0)
    return PartitionTree(coords, config, regions)
