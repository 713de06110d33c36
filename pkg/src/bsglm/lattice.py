"""Masked voxel lattices and their graph-Laplacian precision structures.

A lattice indexes the in-mask voxels of a 3D grid in a fixed scan order
(x fastest, then y, then z). Adjacency is 6-connected in 3D mode and
4-connected within each axial slice in 2D mode. From the adjacency we
build the pair incidence matrix G_w (one row per adjacent in-mask pair,
entries +1/-1) and the Laplacian precision D_w = G_w' C G_w, with C the
identity for the unweighted variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import SparseSym

__all__ = ["VoxelLattice", "GmrfStructure", "build_lattice", "build_ugl", "build_wgl"]


@dataclass(frozen=True)
class VoxelLattice:
    """Masked 3D grid with contiguous voxel indexing.

    ``grid_to_voxel`` maps flat grid position (x + nx*(y + ny*z)) to the
    voxel index in 0..N-1, or -1 outside the mask. ``voxel_to_grid``
    holds the (x, y, z) coordinates of each voxel.
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    mask: np.ndarray          # bool, shape (nx, ny, nz)
    mode: str                 # "3d" or "2d"
    grid_to_voxel: np.ndarray  # int64, flat length nx*ny*nz
    voxel_to_grid: np.ndarray  # int64, shape (N, 3)
    n_voxels: int

    @property
    def slice_of_voxel(self) -> np.ndarray:
        """z-coordinate of each voxel (used by slice-wise analyses)."""
        return self.voxel_to_grid[:, 2]


@dataclass(frozen=True)
class GmrfStructure:
    """Precision D_w and incidence G_w of a lattice graph.

    G_w has one row per adjacent in-mask pair; D_w = G_w' C G_w where C
    is diag(weights) (identity when ``weights`` is None). ``pairs``
    records the (i, j) voxel indices of each G_w row.
    """

    mode: str
    d: SparseSym                 # N x N precision
    g: sp.csr_matrix             # N_G x N incidence (already scaled by sqrt(C))
    pairs: np.ndarray            # (N_G, 2) int64
    weights: np.ndarray | None = None
    _g_t: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def n_pairs(self) -> int:
        return self.g.shape[0]

    def g_transpose(self) -> sp.csr_matrix:
        gt = object.__getattribute__(self, "_g_t")
        if gt is None:
            gt = self.g.T.tocsr()
            object.__setattr__(self, "_g_t", gt)
        return gt


def build_lattice(
    dims: tuple[int, int, int],
    mask: np.ndarray,
    mode: str = "3d",
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> VoxelLattice:
    """Build a masked lattice with deterministic x-fastest voxel indexing."""
    nx, ny, nz = (int(d) for d in dims)
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise ValueError("dims must be positive")
    if mode not in ("2d", "3d"):
        raise ValueError(f"mode must be '2d' or '3d', got {mode!r}")
    mask = np.asarray(mask, dtype=bool).reshape(nx, ny, nz)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no voxels")

    # Scan order: x fastest, then y, then z. mask is indexed [x, y, z], so
    # transpose to (z, y, x) before flattening C-style.
    flat = mask.transpose(2, 1, 0).ravel()
    grid_to_voxel = np.full(flat.shape, -1, dtype=np.int64)
    grid_to_voxel[flat] = np.arange(n, dtype=np.int64)

    flat_idx = np.nonzero(flat)[0]
    x = flat_idx % nx
    y = (flat_idx // nx) % ny
    z = flat_idx // (nx * ny)
    voxel_to_grid = np.stack([x, y, z], axis=1).astype(np.int64)

    return VoxelLattice(
        dims=(nx, ny, nz),
        voxel_size=tuple(float(v) for v in voxel_size),
        mask=mask,
        mode=mode,
        grid_to_voxel=grid_to_voxel,
        voxel_to_grid=voxel_to_grid,
        n_voxels=n,
    )


def adjacent_pairs(lattice: VoxelLattice) -> np.ndarray:
    """All in-mask adjacent voxel pairs (i, j), i at the lower coordinate.

    Pairs are listed axis by axis (x, y, then z in 3D mode) in scan
    order, which fixes the G_w row order deterministically.
    """
    nx, ny, nz = lattice.dims
    g2v = lattice.grid_to_voxel.reshape(nz, ny, nx)
    axes = [(1.0, 0, 0), (0, 1.0, 0)] if lattice.mode == "2d" else [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    blocks = []
    for dx, dy, dz in axes:
        dx, dy, dz = int(dx), int(dy), int(dz)
        a = g2v[: nz - dz if dz else nz, : ny - dy if dy else ny, : nx - dx if dx else nx]
        b = g2v[dz:, dy:, dx:]
        ok = (a >= 0) & (b >= 0)
        blocks.append(np.stack([a[ok], b[ok]], axis=1))
    if not blocks:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(blocks, axis=0)


def _structure_from_pairs(
    lattice: VoxelLattice, pairs: np.ndarray, weights: np.ndarray | None
) -> GmrfStructure:
    n = lattice.n_voxels
    m = pairs.shape[0]
    if weights is None:
        vals = np.ones(m)
    else:
        vals = np.sqrt(weights)
    rows = np.repeat(np.arange(m, dtype=np.int64), 2)
    cols = pairs.ravel()
    data = np.stack([vals, -vals], axis=1).ravel()
    g = sp.csr_matrix((data, (rows, cols)), shape=(m, n))
    d_full = (g.T @ g).tocsr()
    d_full.sum_duplicates()
    return GmrfStructure(
        mode=lattice.mode,
        d=SparseSym.from_csr(d_full),
        g=g,
        pairs=pairs,
        weights=None if weights is None else np.asarray(weights, dtype=float),
    )


def build_ugl(lattice: VoxelLattice) -> GmrfStructure:
    """Unweighted graph-Laplacian structure: D_w = G_w' G_w exactly."""
    return _structure_from_pairs(lattice, adjacent_pairs(lattice), None)


def build_wgl(
    lattice: VoxelLattice,
    weight_rule: str = "inverse-squared-distance",
    weights: np.ndarray | None = None,
) -> GmrfStructure:
    """Weighted graph-Laplacian structure D_w = G_w' C G_w.

    The default rule sets C_ii = 1/d^2 with d the Euclidean distance
    between the pair's voxel centers, so anisotropic voxel sizes
    down-weight the long axis. ``weight_rule='explicit'`` takes the
    positive weights directly.
    """
    pairs = adjacent_pairs(lattice)
    if weight_rule == "explicit":
        if weights is None:
            raise ValueError("explicit weight rule requires weights")
        w = np.asarray(weights, dtype=float)
        if w.shape != (pairs.shape[0],):
            raise ValueError(f"expected {pairs.shape[0]} weights, got {w.shape}")
    elif weight_rule == "inverse-squared-distance":
        sizes = np.asarray(lattice.voxel_size, dtype=float)
        delta = (lattice.voxel_to_grid[pairs[:, 1]] - lattice.voxel_to_grid[pairs[:, 0]]) * sizes
        w = 1.0 / np.sum(delta * delta, axis=1)
    else:
        raise ValueError(f"unknown weight rule {weight_rule!r}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    return _structure_from_pairs(lattice, pairs, w)
