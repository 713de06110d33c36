"""The structured posterior precision for the regression-coefficient field.

With w stacking the K regressor rows of W (index k*N + n), the posterior
precision is

    B = X'X (x) diag(lambda) + diag(alpha) (x) D_w

in the noise-independent case, and more generally

    B = H' blkdiag_n[M_n] H + diag(alpha) (x) D_w

where M_n is the K x K data block of voxel n (lambda_n X'X, or its
AR-adjusted version) and H is the permutation between voxel-major and
regressor-major stacking. Both an explicit sparse assembly and a
matrix-free application are provided; they must agree to rounding, and
the tests hold them to that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import SparseSym

__all__ = [
    "PrecisionOperator",
    "assemble_precision",
    "apply_precision",
    "stack_rows",
    "unstack_rows",
    "rows_to_voxel_major",
    "voxel_major_to_rows",
    "permute_kron_identity_check",
]


def stack_rows(w: np.ndarray) -> np.ndarray:
    """K x N coefficient matrix -> stacked row vector (index k*N + n)."""
    return np.ascontiguousarray(w).ravel()


def unstack_rows(w_r: np.ndarray, k: int, n: int) -> np.ndarray:
    return w_r.reshape(k, n)


def rows_to_voxel_major(v: np.ndarray, k: int, n: int) -> np.ndarray:
    """Apply H: row-stacked vector (k*N + n) -> voxel-major vector (n*K + k)."""
    return v.reshape(k, n).T.ravel()


def voxel_major_to_rows(v: np.ndarray, k: int, n: int) -> np.ndarray:
    """Apply H': voxel-major vector (n*K + k) -> row-stacked vector (k*N + n)."""
    return v.reshape(n, k).T.ravel()


@dataclass(frozen=True)
class PrecisionOperator:
    """Matrix-free action of the posterior precision in row-stacked order.

    Either ``(xtx, lam)`` define the separable data term lambda_n X'X, or
    ``blocks`` holds per-voxel K x K data blocks (lambda already folded
    in). ``alpha`` scales the Laplacian prior per regressor.
    """

    xtx: np.ndarray | None
    lam: np.ndarray | None
    alpha: np.ndarray
    d_w: SparseSym
    blocks: np.ndarray | None = None  # (N, K, K), includes lambda

    def __post_init__(self):
        if self.blocks is None and (self.xtx is None or self.lam is None):
            raise ValueError("either blocks or (xtx, lam) must be given")

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.d_w.n

    @property
    def n(self) -> int:
        return self.k * self.n_voxels

    def data_blocks(self) -> np.ndarray:
        """Per-voxel K x K data blocks, materialized."""
        if self.blocks is not None:
            return self.blocks
        return self.lam[:, None, None] * self.xtx[None, :, :]

    def apply(self, x: np.ndarray) -> np.ndarray:
        k, n = self.k, self.n_voxels
        xm = x.reshape(k, n)
        if self.blocks is None:
            data = (self.xtx @ xm) * self.lam[None, :]
        else:
            data = np.einsum("nij,nj->ni", self.blocks, xm.T).T
        prior = self.alpha[:, None] * (self.d_w.full @ xm.T).T
        return (data + prior).ravel()


def apply_precision(op: PrecisionOperator, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != op.n:
        raise ValueError(f"expected vector of length {op.n}, got {x.shape[0]}")
    return op.apply(np.asarray(x, dtype=float))


def assemble_precision(
    xtx: np.ndarray | None,
    lam: np.ndarray | None,
    alpha: np.ndarray,
    d_w: SparseSym,
    blocks: np.ndarray | None = None,
) -> SparseSym:
    """Explicit sparse assembly of the posterior precision in row-stacked order."""
    op = PrecisionOperator(xtx=xtx, lam=lam, alpha=alpha, d_w=d_w, blocks=blocks)
    k, n = op.k, op.n_voxels
    m = op.data_blocks()
    if m.shape != (n, k, k):
        raise ValueError(f"data blocks must have shape {(n, k, k)}, got {m.shape}")

    # data term: entries (k1*N + n, k2*N + n)
    k1, k2 = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    vox = np.arange(n)
    rows_d = (k1.ravel()[:, None] * n + vox[None, :]).ravel()
    cols_d = (k2.ravel()[:, None] * n + vox[None, :]).ravel()
    vals_d = m.transpose(1, 2, 0).reshape(k * k, n).ravel()

    # prior term: alpha_k * D_w on the k-th diagonal block
    dcoo = d_w.full.tocoo()
    rows_p = (np.arange(k)[:, None] * n + dcoo.row[None, :]).ravel()
    cols_p = (np.arange(k)[:, None] * n + dcoo.col[None, :]).ravel()
    vals_p = (alpha[:, None] * dcoo.data[None, :]).ravel()

    full = sp.csr_matrix(
        (
            np.concatenate([vals_d, vals_p]),
            (np.concatenate([rows_d, rows_p]), np.concatenate([cols_d, cols_p])),
        ),
        shape=(k * n, k * n),
    )
    full.sum_duplicates()
    return SparseSym.from_csr(full, check_symmetry=False)


def permute_kron_identity_check(k: int, n: int, lam: np.ndarray, xtx: np.ndarray) -> bool:
    """Verify H'(diag(lam) (x) X'X)H == X'X (x) diag(lam) exactly (test scale)."""
    if k * n > 10_000:
        raise ValueError("check is intended for small test-scale instances")
    voxel_major = np.kron(np.diag(lam), xtx)
    # H maps row-stacked to voxel-major: (H v)[n*K + k] = v[k*N + n], so
    # H[i, sigma(i)] = 1 with sigma(n*K + k) = k*N + n.
    sigma = np.arange(k * n).reshape(k, n).T.ravel()
    h = np.zeros((k * n, k * n))
    h[np.arange(k * n), sigma] = 1.0
    lhs = h.T @ voxel_major @ h
    rhs = np.kron(xtx, np.diag(lam))
    return bool(np.array_equal(lhs, rhs))
